#include "ucmt/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "ucmt/errors.hpp"

namespace ucmt::experiment {
namespace {

std::string real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fixed(double v, int digits) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

double series_value(const trainer::HistoryRecord& h, const std::string& series) {
    if (series == "disagreement") return h.disagreement;
    if (series == "mean_entropy") return h.mean_entropy;
    return h.val_dsc;
}

// Latest record with t' <= t, or the first record.
const trainer::HistoryRecord& at_or_before(const std::vector<trainer::HistoryRecord>& h, std::int64_t t) {
    auto it = std::upper_bound(h.begin(), h.end(), t,
                               [](std::int64_t v, const trainer::HistoryRecord& r) { return v < r.loss.t; });
    return it == h.begin() ? h.front() : *std::prev(it);
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

TrainConfig with_replicate(TrainConfig cfg, std::uint64_t replicate) {
    cfg.seed_init1 = 3 * replicate + 1;
    cfg.seed_init2 = 3 * replicate + 2;
    cfg.seed_data = 3 * replicate + 3;
    return cfg;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    std::vector<std::uint64_t> reps = spec.replicates;
    const bool own_seeds = reps.empty();
    if (own_seeds) reps.push_back(0);
    ExperimentResult result;
    for (std::uint64_t rep : reps) {
        const TrainConfig cfg = own_seeds ? spec.cfg : with_replicate(spec.cfg, rep);
        const trainer::TrainingData data = trainer::make_training_data(cfg);
        trainer::TrainResult tr = trainer::run_training(cfg, data);
        RunSummary run;
        run.replicate = rep;
        run.diverged = tr.diverged;
        run.final_dsc = trainer::teacher_dsc(tr.state.teacher, data.validation, cfg.generator.classes);
        if (!spec.out.empty()) {
            const auto dir = spec.out / spec.name / ("rep" + std::to_string(rep));
            std::filesystem::create_directories(dir);
            run.history_path = dir / "history.csv";
            std::ofstream f(run.history_path, std::ios::binary);
            trainer::write_history_csv(f, tr.history);
            if (!f) throw IoError("cannot write " + run.history_path.string());
        }
        run.history = std::move(tr.history);
        result.mean_dsc += run.final_dsc / static_cast<double>(reps.size());
        result.runs.push_back(std::move(run));
    }
    return result;
}

void write_sweep_header(std::ostream& out) { out << "k,r,k_effective,mean_dsc,runs,diverged\n"; }

void write_sweep_row(std::ostream& out, const SweepCell& c) {
    out << c.k << ',' << c.r << ',' << c.k_effective << ',' << real(c.mean_dsc) << ',' << c.dsc.size() << ','
        << (c.diverged ? 1 : 0) << '\n';
    out.flush();
}

std::vector<SweepCell> run_sweep(const SweepSpec& spec, std::ostream* table) {
    if (spec.ks.empty() || spec.rs.empty()) throw ConfigError("sweep grid is empty");
    for (std::size_t r : spec.rs) {
        if (r < 2) throw ConfigError("sweep r values must be at least 2");
    }
    for (std::size_t k : spec.ks) {
        if (k < 1) throw ConfigError("sweep k values must be at least 1");
    }
    if (table != nullptr) write_sweep_header(*table);
    std::vector<SweepCell> cells;
    for (std::size_t r : spec.rs) {
        for (std::size_t k : spec.ks) {
            SweepCell cell;
            cell.k = k;
            cell.r = r;
            cell.k_effective = std::min(k, r / 2);
            ExperimentSpec exp;
            exp.cfg = spec.base;
            exp.cfg.k = cell.k_effective;
            exp.cfg.r = r;
            exp.replicates = spec.replicates;
            const ExperimentResult res = run_experiment(exp);
            for (const auto& run : res.runs) {
                cell.dsc.push_back(run.final_dsc);
                cell.diverged = cell.diverged || run.diverged;
            }
            cell.mean_dsc = res.mean_dsc;
            if (table != nullptr) write_sweep_row(*table, cell);
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

void write_sweep_matrix(std::ostream& out, const SweepSpec& spec, const std::vector<SweepCell>& cells) {
    out << "region";
    for (std::size_t k : spec.ks) out << ",k=" << k;
    out << '\n';
    for (std::size_t r : spec.rs) {
        out << "1/" << r;
        for (std::size_t k : spec.ks) {
            const auto it = std::find_if(cells.begin(), cells.end(),
                                         [&](const SweepCell& c) { return c.k == k && c.r == r; });
            out << ',' << (it == cells.end() ? std::string() : fixed(100.0 * it->mean_dsc, 2));
        }
        out << '\n';
    }
}

CurveSet merge_curves(const std::vector<CurveInput>& inputs) {
    CurveSet out;
    if (inputs.empty()) throw PreconditionError("report needs at least one history");
    for (const auto& in : inputs) {
        if (in.history.empty()) throw PreconditionError("history for '" + in.label + "' is empty");
    }
    const auto grid_of = [](const CurveInput& in) {
        std::vector<std::int64_t> g;
        for (const auto& h : in.history) g.push_back(h.loss.t);
        return g;
    };
    std::vector<std::int64_t> grid = grid_of(inputs.front());
    bool consistent = true;
    for (const auto& in : inputs) {
        const auto g = grid_of(in);
        if (g != grid) consistent = false;
        if (g.size() < grid.size()) grid = g;
    }
    if (!consistent) {
        out.warnings.push_back("histories use different iteration grids; resampled to the coarsest (" +
                               std::to_string(grid.size()) + " points)");
    }

    std::map<std::string, std::vector<const CurveInput*>> groups;
    for (const auto& in : inputs) {
        if (groups.find(in.label) == groups.end()) out.methods.push_back(in.label);
        groups[in.label].push_back(&in);
    }
    for (const auto& method : out.methods) {
        const auto& members = groups[method];
        for (std::int64_t t : grid) {
            for (const auto& series : curve_series()) {
                double sum = 0.0;
                for (const CurveInput* in : members) sum += series_value(at_or_before(in->history, t), series);
                const double value = members.size() == 1 ? sum : sum / static_cast<double>(members.size());
                out.points.push_back({method, t, series, value});
            }
        }
    }
    return out;
}

void write_curves_csv(std::ostream& out, const CurveSet& curves) {
    out << "method,t,series,value\n";
    for (const auto& p : curves.points) out << p.method << ',' << p.t << ',' << p.series << ',' << real(p.value) << '\n';
}

std::string render_svg(const CurveSet& curves, const std::string& series) {
    constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
    static const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

    double t_lo = 0, t_hi = 1, v_lo = 0, v_hi = 1;
    bool first = true;
    for (const auto& p : curves.points) {
        if (p.series != series || !std::isfinite(p.value)) continue;
        const double t = static_cast<double>(p.t);
        if (first) {
            t_lo = t_hi = t;
            v_lo = v_hi = p.value;
            first = false;
        }
        t_lo = std::min(t_lo, t);
        t_hi = std::max(t_hi, t);
        v_lo = std::min(v_lo, p.value);
        v_hi = std::max(v_hi, p.value);
    }
    if (t_hi <= t_lo) t_hi = t_lo + 1;
    if (v_hi <= v_lo) v_hi = v_lo + 1e-9 + std::abs(v_lo) * 0.01;
    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    const auto sx = [&](double t) { return kLeft + (t - t_lo) / (t_hi - t_lo) * pw; };
    const auto sy = [&](double v) { return kTop + (1.0 - (v - v_lo) / (v_hi - v_lo)) * ph; };

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 "
       << kW << ' ' << kH << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kLeft << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << escape_xml(series)
       << "</text>\n"
       << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    const auto label = [&](double x, double y, const std::string& text, const char* anchor) {
        os << "<text x=\"" << fixed(x, 1) << "\" y=\"" << fixed(y, 1) << "\" font-family=\"sans-serif\" font-size=\"11\""
           << " text-anchor=\"" << anchor << "\">" << escape_xml(text) << "</text>\n";
    };
    label(kLeft - 6, kTop + 4, fixed(v_hi, 4), "end");
    label(kLeft - 6, kTop + ph, fixed(v_lo, 4), "end");
    label(kLeft, kTop + ph + 18, fixed(t_lo, 0), "middle");
    label(kLeft + pw, kTop + ph + 18, fixed(t_hi, 0), "middle");
    label(kLeft + pw / 2, kH - 10, "iteration t", "middle");

    for (std::size_t m = 0; m < curves.methods.size(); ++m) {
        const char* color = kColors[m % (sizeof kColors / sizeof kColors[0])];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        bool any = false;
        for (const auto& p : curves.points) {
            if (p.method != curves.methods[m] || p.series != series || !std::isfinite(p.value)) continue;
            os << (any ? " " : "") << fixed(sx(static_cast<double>(p.t)), 2) << ',' << fixed(sy(p.value), 2);
            any = true;
        }
        os << "\"/>\n";
        const double ly = kTop + 16.0 * static_cast<double>(m) + 8;
        os << "<line x1=\"" << kW - kRight + 12 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 32 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        label(kW - kRight + 36, ly + 4, curves.methods[m], "start");
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace ucmt::experiment

#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "../attack/rlbf.hpp"
#include "../error.hpp"
#include "experiment.hpp"

namespace rpl::evalkit {

enum class ReportFormat { json, markdown, svg };

inline ReportFormat parse_report_format(std::string_view s) {
    if (s == "json") return ReportFormat::json;
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    if (s == "svg") return ReportFormat::svg;
    throw ConfigError("unknown report format: " + std::string(s));
}

// report.json holds everything that is a pure function of configuration and
// seed. Wall-clock seconds go to timings.json so that repeated runs produce
// byte-identical reports.

inline nlohmann::ordered_json report_to_json(const AsrReport& r) {
    nlohmann::ordered_json j;
    j["format_version"] = AsrReport::kFormatVersion;
    j["seed"] = r.seed;
    auto cells = nlohmann::ordered_json::array();
    for (const auto& c : r.cells) {
        nlohmann::ordered_json o;
        o["label"] = c.label;
        o["attacker"] = std::string(to_string(c.attacker));
        o["retriever_mode"] = std::string(to_string(c.retriever_mode));
        o["defense"] = std::string(to_string(c.defense));
        o["M"] = c.M;
        o["successes"] = c.successes;
        o["n_eval"] = c.n_eval;
        o["asr"] = c.asr;
        o["blackbox_calls"] = c.blackbox_calls;
        o["failed_qids"] = c.failed_qids;
        cells.push_back(std::move(o));
    }
    j["cells"] = std::move(cells);
    auto curves = nlohmann::ordered_json::array();
    for (const auto& s : r.curves) {
        nlohmann::ordered_json o;
        o["name"] = s.name;
        auto pts = nlohmann::ordered_json::array();
        for (const auto& p : s.points) pts.push_back(nlohmann::ordered_json::array({p.epoch, p.value}));
        o["points"] = std::move(pts);
        curves.push_back(std::move(o));
    }
    j["curves"] = std::move(curves);
    return j;
}

inline nlohmann::ordered_json timings_to_json(const AsrReport& r) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& c : r.cells) j[c.label] = c.wall_seconds;
    return j;
}

inline AsrReport report_from_json(const nlohmann::json& j, const nlohmann::json* timings = nullptr) {
    try {
        if (j.at("format_version").get<int>() != AsrReport::kFormatVersion) {
            throw ParseError("unsupported report format_version " + j.at("format_version").dump());
        }
        AsrReport r;
        r.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& o : j.at("cells")) {
            AsrCell c;
            c.label = o.at("label").get<std::string>();
            c.attacker = parse_attacker(o.at("attacker").get<std::string>());
            c.retriever_mode = parse_retriever_mode(o.at("retriever_mode").get<std::string>());
            c.defense = parse_defense(o.at("defense").get<std::string>());
            c.M = o.at("M").get<std::size_t>();
            c.successes = o.at("successes").get<std::size_t>();
            c.n_eval = o.at("n_eval").get<std::size_t>();
            c.asr = o.at("asr").get<double>();
            c.blackbox_calls = o.at("blackbox_calls").get<std::uint64_t>();
            c.failed_qids = o.at("failed_qids").get<std::vector<std::string>>();
            if (timings && timings->contains(c.label)) c.wall_seconds = timings->at(c.label).get<double>();
            r.cells.push_back(std::move(c));
        }
        for (const auto& o : j.at("curves")) {
            CurveSeries s;
            s.name = o.at("name").get<std::string>();
            for (const auto& p : o.at("points")) s.points.push_back({p.at(0).get<std::uint64_t>(), p.at(1).get<double>()});
            r.curves.push_back(std::move(s));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed report: ") + e.what());
    }
}

inline std::string fmt_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

/// Attacker rows by retriever/defense/M columns.
inline std::string report_markdown(const AsrReport& r) {
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    std::map<std::pair<std::string, std::string>, const AsrCell*> grid;
    for (const auto& c : r.cells) {
        const std::string col =
            std::string(to_string(c.retriever_mode)) + " / " + std::string(to_string(c.defense)) + " / M=" + std::to_string(c.M);
        if (std::find(rows.begin(), rows.end(), c.label) == rows.end()) rows.push_back(c.label);
        if (std::find(cols.begin(), cols.end(), col) == cols.end()) cols.push_back(col);
        grid[{c.label, col}] = &c;
    }
    std::ostringstream out;
    out << "# Attack success rate\n\nseed: " << r.seed << "\n\n| attacker |";
    for (const auto& c : cols) out << ' ' << c << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < cols.size(); ++i) out << "---:|";
    out << '\n';
    for (const auto& row : rows) {
        out << "| " << row << " |";
        for (const auto& col : cols) {
            const auto it = grid.find({row, col});
            if (it == grid.end()) {
                out << " - |";
                continue;
            }
            const auto& c = *it->second;
            out << ' ' << fmt_fixed(c.asr, 3) << " (" << c.successes << '/' << c.n_eval << ")";
            if (!c.failed_qids.empty()) out << " [" << c.failed_qids.size() << " failed]";
            out << " |";
        }
        out << '\n';
    }
    out << "\n| attacker | column | black-box calls |\n|---|---|---:|\n";
    for (const auto& c : r.cells) {
        out << "| " << c.label << " | " << to_string(c.retriever_mode) << " / " << to_string(c.defense) << " / M=" << c.M
            << " | " << c.blackbox_calls << " |\n";
    }
    return out.str();
}

inline std::string xml_escape(std::string_view s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

/// ASR-vs-epoch plot, one polyline per series. Values are clamped to [0, 1].
inline std::string report_svg(const AsrReport& r) {
    constexpr double W = 720, H = 420, L = 60, R = 200, T = 30, B = 50;
    constexpr std::array<const char*, 10> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                      "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::uint64_t max_epoch = 1;
    for (const auto& s : r.curves) {
        for (const auto& p : s.points) max_epoch = std::max(max_epoch, p.epoch);
    }
    const double pw = W - L - R, ph = H - T - B;
    const auto x_of = [&](double e) { return L + pw * e / static_cast<double>(max_epoch); };
    const auto y_of = [&](double v) { return T + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };
    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
        << ' ' << H << "\">\n"
        << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
        << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
        << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = i / 4.0;
        out << "<text x=\"" << L - 8 << "\" y=\"" << fmt_fixed(y_of(v) + 4, 1) << "\" font-size=\"11\" text-anchor=\"end\">"
            << fmt_fixed(v, 2) << "</text>\n";
    }
    out << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" font-size=\"12\" text-anchor=\"middle\">epoch (max "
        << max_epoch << ")</text>\n"
        << "<text x=\"16\" y=\"" << T + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 " << T + ph / 2
        << ")\" text-anchor=\"middle\">ASR</text>\n";
    for (std::size_t i = 0; i < r.curves.size(); ++i) {
        const auto& s = r.curves[i];
        const char* color = kPalette[i % kPalette.size()];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < s.points.size(); ++k) {
            if (k) out << ' ';
            out << fmt_fixed(x_of(static_cast<double>(s.points[k].epoch)), 2) << ','
                << fmt_fixed(y_of(s.points[k].value), 2);
        }
        out << "\"/>\n";
        const double ly = T + 14.0 * static_cast<double>(i) + 6;
        out << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 30 << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
            << "<text x=\"" << L + pw + 34 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << xml_escape(s.name)
            << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

/// Writes report.json (+ timings.json), report.md and training_curve.svg as
/// requested.
inline void emit_report(const AsrReport& r, const std::filesystem::path& dir, const std::set<ReportFormat>& formats) {
    std::filesystem::create_directories(dir);
    if (formats.contains(ReportFormat::json)) {
        write_text(dir / "report.json", report_to_json(r).dump(2) + "\n");
        write_text(dir / "timings.json", timings_to_json(r).dump(2) + "\n");
    }
    if (formats.contains(ReportFormat::markdown)) write_text(dir / "report.md", report_markdown(r));
    if (formats.contains(ReportFormat::svg)) write_text(dir / "training_curve.svg", report_svg(r));
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

/// Reads report.json and, when present, timings.json from `dir`.
inline AsrReport load_report(const std::filesystem::path& dir) {
    const auto j = read_json_file(dir / "report.json");
    if (std::filesystem::exists(dir / "timings.json")) {
        const auto t = read_json_file(dir / "timings.json");
        return report_from_json(j, &t);
    }
    return report_from_json(j);
}

inline nlohmann::ordered_json metrics_to_json(const attack::EpochMetrics& m) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["mean_reward"] = m.mean_reward;
    j["mean_r_sim"] = m.mean_r_sim;
    j["mean_r_suc"] = m.mean_r_suc;
    j["train_asr"] = m.train_asr;
    if (m.eval_asr) j["eval_asr"] = *m.eval_asr;
    j["blackbox_calls"] = m.blackbox_calls;
    j["loss"] = m.loss;
    j["dropped_queries"] = m.dropped_queries;
    return j;
}

/// Appends one JSON object per epoch.
class MetricsWriter {
public:
    MetricsWriter(const std::filesystem::path& path, bool append) : out_(path, append ? std::ios::app : std::ios::trunc) {
        if (!out_) throw Error("cannot write " + path.string());
    }
    void write(const attack::EpochMetrics& m) {
        out_ << metrics_to_json(m).dump() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

} // namespace rpl::evalkit

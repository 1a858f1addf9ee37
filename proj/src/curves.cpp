#include "felab/curves.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "felab/config.hpp"

namespace felab {

namespace {

constexpr const char* kCurveHeader = "delta,seed,acc_modified,acc_unmodified,acc_avg,regime,selector";

double parse_double_field(const std::string& s, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE)
        throw IoError(where + ": malformed number \"" + s + "\"");
    return v;
}

uint64_t parse_seed_field(const std::string& s, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE)
        throw IoError(where + ": malformed seed \"" + s + "\"");
    return static_cast<uint64_t>(v);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (true) {
        const size_t next = line.find(',', pos);
        if (next == std::string::npos) {
            out.push_back(line.substr(pos));
            return out;
        }
        out.push_back(line.substr(pos, next - pos));
        pos = next + 1;
    }
}

}  // namespace

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_curves_csv(const std::vector<MetricsRecord>& rows, const std::string& path) {
    if (rows.empty()) throw ValueError("write_curves_csv: no rows");
    std::ostringstream out;
    out << kCurveHeader << "\n";
    for (const auto& r : rows) {
        out << format_double(r.delta) << "," << r.seed << "," << format_double(r.acc_modified) << ","
            << format_double(r.acc_unmodified) << "," << format_double(r.acc_avg) << "," << r.regime << ","
            << r.selector << "\n";
    }
    write_text_file(path, out.str());
}

std::vector<MetricsRecord> read_curves_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": empty curve file");
    if (line == std::string(kCurveHeader) + "\r") line.pop_back();
    if (line != kCurveHeader)
        throw IoError(path + ": unexpected header \"" + line + "\"");
    std::vector<MetricsRecord> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        const auto fields = split_csv_line(line);
        if (fields.size() != 7) throw IoError(where + ": expected 7 fields, found " + std::to_string(fields.size()));
        MetricsRecord r;
        r.delta = parse_double_field(fields[0], where);
        r.seed = parse_seed_field(fields[1], where);
        r.acc_modified = parse_double_field(fields[2], where);
        r.acc_unmodified = parse_double_field(fields[3], where);
        r.acc_avg = parse_double_field(fields[4], where);
        r.regime = fields[5];
        r.selector = fields[6];
        if (r.acc_avg != (r.acc_modified + r.acc_unmodified) / 2.0)
            throw IoError(where + ": acc_avg is not the mean of the slice accuracies");
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw IoError(path + ": no data rows");
    return rows;
}

namespace {

json summary_entry(const DeltaSummary& s) {
    return json{{"delta", radius_to_json(s.delta)},
                {"n_seeds", s.n_seeds},
                {"mean_acc_modified", s.mean_acc_modified},
                {"se_acc_modified", s.se_acc_modified},
                {"mean_acc_unmodified", s.mean_acc_unmodified},
                {"se_acc_unmodified", s.se_acc_unmodified},
                {"mean_acc_avg", s.mean_acc_avg},
                {"se_acc_avg", s.se_acc_avg}};
}

}  // namespace

void write_sweep_summary(const SweepResult& res, const std::string& path) {
    if (res.summary.empty()) throw ValueError("write_sweep_summary: empty summary");
    json per_delta = json::array();
    for (const auto& s : res.summary) per_delta.push_back(summary_entry(s));
    const json j{{"rows", res.rows.size()}, {"per_delta", std::move(per_delta)}, {"best", summary_entry(res.best)}};
    write_text_file(path, j.dump(2) + "\n");
}

void emit_curves(const SweepResult& res, const std::string& dir) {
    write_curves_csv(res.rows, dir + "/curves.csv");
    write_sweep_summary(res, dir + "/summary.json");
}

}  // namespace felab

#include "brain3d/report.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace brain3d::report {

std::string layout_name(Layout l) {
    switch (l) {
        case Layout::gt_table: return "gt_table";
        case Layout::intermediate_table: return "intermediate_table";
        case Layout::ablation_table: return "ablation_table";
    }
    throw Error("bad layout value");
}

Layout layout_from_name(const std::string& name) {
    if (name == "gt_table") return Layout::gt_table;
    if (name == "intermediate_table") return Layout::intermediate_table;
    if (name == "ablation_table") return Layout::ablation_table;
    throw ValidationError("unknown report layout: " + name);
}

std::vector<std::string> standard_columns(const std::vector<std::pair<int, int>>& nway_settings) {
    std::vector<std::string> cols;
    for (const auto& [n, k] : nway_settings)
        cols.push_back(std::to_string(n) + "way-top" + std::to_string(k));
    cols.insert(cols.end(), {"clipscore", "is", "fid", "lpips"});
    return cols;
}

std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string format_delta(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.3f", v);
    std::string s = buf;
    if (s == "+0.000" || s == "-0.000") return "0.000";
    return s;
}

namespace {
void check_row(const ReportDoc& doc, const TableRow& row) {
    if (row.label.empty() || row.label.find_first_of(" \t") != std::string::npos)
        throw ValidationError("row label must be non-empty and whitespace-free: '" + row.label + "'");
    if (row.values.size() != doc.columns.size())
        throw ValidationError("row '" + row.label + "' has " + std::to_string(row.values.size()) +
                              " values for " + std::to_string(doc.columns.size()) + " columns");
}

const TableRow& baseline_for(const ReportDoc& doc, size_t i) {
    if (i >= doc.baseline_rows.size() || doc.baseline_rows[i].label != doc.rows[i].label)
        throw ValidationError("no matching baseline row for '" + doc.rows[i].label + "'");
    return doc.baseline_rows[i];
}
}  // namespace

std::string render_report(const ReportDoc& doc) {
    if (doc.rows.empty()) throw ValidationError("refusing to render an empty report");
    if (doc.columns.empty()) throw ValidationError("report has no columns");

    std::string out = "# brain3d metrics report\n";
    out += "# layout: " + layout_name(doc.layout) + "\n";
    out += "# columns: backbone ";
    if (doc.layout == Layout::ablation_table) out += "setting ";
    for (size_t i = 0; i < doc.columns.size(); ++i)
        out += doc.columns[i] + (i + 1 < doc.columns.size() ? " " : "\n");

    for (size_t r = 0; r < doc.rows.size(); ++r) {
        const TableRow& row = doc.rows[r];
        check_row(doc, row);
        switch (doc.layout) {
            case Layout::gt_table: {
                out += row.label;
                for (double v : row.values) out += " " + format_value(v);
                out += "\n";
                break;
            }
            case Layout::intermediate_table: {
                const TableRow& base = baseline_for(doc, r);
                check_row(doc, base);
                out += row.label;
                for (double v : row.values) out += " " + format_value(v);
                out += "\n" + row.label + " delta";
                for (size_t i = 0; i < row.values.size(); ++i)
                    out += " " + format_delta(row.values[i] - base.values[i]);
                out += "\n";
                break;
            }
            case Layout::ablation_table: {
                const TableRow& base = baseline_for(doc, r);
                check_row(doc, base);
                out += row.label + " full";
                for (double v : row.values) out += " " + format_value(v);
                out += "\n" + row.label + " direct";
                for (double v : base.values) out += " " + format_value(v);
                out += "\n" + row.label + " delta";
                for (size_t i = 0; i < row.values.size(); ++i)
                    out += " " + format_delta(row.values[i] - base.values[i]);
                out += "\n";
                break;
            }
        }
    }
    return out;
}

namespace {
double round3(double v) {
    return std::round(v * 1000.0) / 1000.0;
}

std::vector<std::string> tokens(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::vector<double> parse_values(const std::vector<std::string>& toks, size_t from, int lineno) {
    std::vector<double> out;
    for (size_t i = from; i < toks.size(); ++i) {
        try {
            out.push_back(std::stod(toks[i]));
        } catch (const std::exception&) {
            throw ParseError("bad numeric field '" + toks[i] + "'", "<report>", lineno);
        }
    }
    return out;
}
}  // namespace

ReportDoc parse_report(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    ReportDoc doc;

    auto next_line = [&]() {
        if (!std::getline(in, line)) throw ParseError("unexpected end of report", "<report>", lineno);
        ++lineno;
    };
    next_line();
    if (line != "# brain3d metrics report") throw ParseError("missing report header", "<report>", lineno);
    next_line();
    const std::string layout_prefix = "# layout: ";
    if (line.rfind(layout_prefix, 0) != 0) throw ParseError("missing layout line", "<report>", lineno);
    doc.layout = layout_from_name(line.substr(layout_prefix.size()));
    next_line();
    const std::string cols_prefix = "# columns: ";
    if (line.rfind(cols_prefix, 0) != 0) throw ParseError("missing columns line", "<report>", lineno);
    auto header = tokens(line.substr(cols_prefix.size()));
    size_t skip = doc.layout == Layout::ablation_table ? 2 : 1;  // backbone [setting]
    if (header.size() <= skip) throw ParseError("no metric columns", "<report>", lineno);
    doc.columns.assign(header.begin() + long(skip), header.end());

    std::map<std::string, size_t> row_index;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto toks = tokens(line);
        if (toks.size() < 2) throw ParseError("short row", "<report>", lineno);
        const std::string& label = toks[0];
        switch (doc.layout) {
            case Layout::gt_table: {
                doc.rows.push_back({label, parse_values(toks, 1, lineno)});
                break;
            }
            case Layout::intermediate_table: {
                if (toks.size() >= 2 && toks[1] == "delta") {
                    auto it = row_index.find(label);
                    if (it == row_index.end())
                        throw ParseError("delta row without value row for '" + label + "'", "<report>",
                                         lineno);
                    auto deltas = parse_values(toks, 2, lineno);
                    const auto& vals = doc.rows[it->second].values;
                    if (deltas.size() != vals.size())
                        throw ParseError("delta row width mismatch", "<report>", lineno);
                    TableRow base{label, {}};
                    for (size_t i = 0; i < vals.size(); ++i)
                        base.values.push_back(round3(vals[i] - deltas[i]));
                    doc.baseline_rows.push_back(std::move(base));
                } else {
                    row_index[label] = doc.rows.size();
                    doc.rows.push_back({label, parse_values(toks, 1, lineno)});
                }
                break;
            }
            case Layout::ablation_table: {
                if (toks.size() < 3) throw ParseError("short ablation row", "<report>", lineno);
                const std::string& setting = toks[1];
                auto values = parse_values(toks, 2, lineno);
                if (setting == "full") {
                    row_index[label] = doc.rows.size();
                    doc.rows.push_back({label, std::move(values)});
                } else if (setting == "direct") {
                    doc.baseline_rows.push_back({label, std::move(values)});
                } else if (setting == "delta") {
                    // derived line, validated against full/direct on render
                } else {
                    throw ParseError("unknown setting '" + setting + "'", "<report>", lineno);
                }
                break;
            }
        }
    }
    if (doc.rows.empty()) throw ParseError("report has no rows", "<report>", 1);
    for (const auto& row : doc.rows) {
        if (row.values.size() != doc.columns.size())
            throw ParseError("row '" + row.label + "' width mismatch", "<report>", 1);
    }
    return doc;
}

}  // namespace brain3d::report

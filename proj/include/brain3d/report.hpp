#pragma once

#include <string>
#include <vector>

#include "brain3d/common.hpp"

namespace brain3d::report {

enum class Layout { gt_table, intermediate_table, ablation_table };

std::string layout_name(Layout l);
Layout layout_from_name(const std::string& name);

struct TableRow {
    std::string label;
    std::vector<double> values;
};

// One renderable table. `rows` hold the primary values; `baseline_rows`
// (matched per label, same order) hold the comparison values:
//   gt_table            rows only
//   intermediate_table  rows = vs-intermediate, baseline = vs-ground-truth;
//                       a delta line (row - baseline) follows each row
//   ablation_table      rows = full pipeline, baseline = direct image-to-3D;
//                       renders full, direct and gain/loss lines per label
struct ReportDoc {
    Layout layout = Layout::gt_table;
    std::vector<std::string> columns;
    std::vector<TableRow> rows;
    std::vector<TableRow> baseline_rows;
};

// The paper-style column set for a list of (n, k) retrieval settings.
std::vector<std::string> standard_columns(const std::vector<std::pair<int, int>>& nway_settings);

// Fixed 3-decimal formatting; deltas are signed except exact zero.
std::string format_value(double v);
std::string format_delta(double v);

std::string render_report(const ReportDoc& doc);
ReportDoc parse_report(const std::string& text);

}  // namespace brain3d::report

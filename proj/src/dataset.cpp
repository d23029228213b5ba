#include "qpkpd/dataset.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/text.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace qpkpd {

namespace {

constexpr std::array<std::string_view, 11> kColumns = {
    "ID", "BW", "COMED", "DOSE", "TIME", "DV", "EVID", "MDV", "AMT", "CMT", "DVID"};

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

std::string upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::toupper(c); });
    return out;
}

std::vector<std::string_view> split_line(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            cells.push_back(trim(line.substr(start)));
            break;
        }
        cells.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return cells;
}

bool is_missing(std::string_view cell) {
    if (cell.empty() || cell == ".")
        return true;
    return cell.size() == 2 &&
           std::toupper(static_cast<unsigned char>(cell[0])) == 'N' &&
           std::toupper(static_cast<unsigned char>(cell[1])) == 'A';
}

double parse_double(std::string_view cell, int line, std::string_view column) {
    double value = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last)
        throw ParseError("row " + std::to_string(line) + ", column " +
                         std::string(column) + ": cannot parse '" +
                         std::string(cell) + "' as a number");
    return value;
}

long parse_int(std::string_view cell, int line, std::string_view column) {
    double v = parse_double(cell, line, column);
    long i = static_cast<long>(v);
    if (static_cast<double>(i) != v)
        throw ParseError("row " + std::to_string(line) + ", column " +
                         std::string(column) + ": expected an integer, got '" +
                         std::string(cell) + "'");
    return i;
}

std::string row_tag(const DatasetRecord& r) {
    if (r.source_line > 0)
        return "line " + std::to_string(r.source_line);
    return "record for subject " + std::to_string(r.id);
}

} // namespace

ParseResult parse_dataset(std::string_view text) {
    // Collect non-empty lines (tolerating trailing \r from CRLF files).
    std::vector<std::pair<int, std::string_view>> lines;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string_view raw = (nl == std::string_view::npos)
                                   ? text.substr(pos)
                                   : text.substr(pos, nl - pos);
        ++line_no;
        if (!trim(raw).empty())
            lines.emplace_back(line_no, raw);
        if (nl == std::string_view::npos)
            break;
        pos = nl + 1;
    }
    if (lines.empty())
        throw EmptyInputError("dataset is empty");

    // Header: map canonical column -> cell index.
    const auto header_cells = split_line(lines.front().second);
    std::map<std::string, std::size_t> position;
    ParseResult result;
    for (std::size_t i = 0; i < header_cells.size(); ++i) {
        std::string name = upper(header_cells[i]);
        bool known = std::find(kColumns.begin(), kColumns.end(), name) != kColumns.end();
        if (!known) {
            result.warnings.push_back("ignoring unknown column '" +
                                      std::string(header_cells[i]) + "'");
            continue;
        }
        if (position.count(name))
            throw SchemaError("duplicate column " + name);
        position[name] = i;
    }
    for (auto col : kColumns) {
        if (!position.count(std::string(col)))
            throw SchemaError("missing required column " + std::string(col));
    }

    result.records.reserve(lines.size() - 1);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const int line = lines[r].first;
        const auto cells = split_line(lines[r].second);
        auto cell = [&](std::string_view col) -> std::string_view {
            std::size_t idx = position.at(std::string(col));
            if (idx >= cells.size())
                throw ParseError("row " + std::to_string(line) +
                                 ": too few cells (expected at least " +
                                 std::to_string(idx + 1) + ")");
            return cells[idx];
        };

        DatasetRecord rec;
        rec.source_line = line;
        rec.id = parse_int(cell("ID"), line, "ID");
        rec.bw = parse_double(cell("BW"), line, "BW");
        rec.comed = static_cast<int>(parse_int(cell("COMED"), line, "COMED"));
        rec.dose = parse_double(cell("DOSE"), line, "DOSE");
        rec.time = parse_double(cell("TIME"), line, "TIME");
        if (auto dv = cell("DV"); !is_missing(dv))
            rec.dv = parse_double(dv, line, "DV");
        rec.evid = static_cast<int>(parse_int(cell("EVID"), line, "EVID"));
        rec.mdv = static_cast<int>(parse_int(cell("MDV"), line, "MDV"));
        rec.amt = parse_double(cell("AMT"), line, "AMT");
        rec.cmt = static_cast<int>(parse_int(cell("CMT"), line, "CMT"));
        if (auto dvid = cell("DVID"); !is_missing(dvid))
            rec.dvid = static_cast<int>(parse_int(dvid, line, "DVID"));
        result.records.push_back(rec);
    }
    if (result.records.empty())
        throw EmptyInputError("dataset has a header but no records");

    validate_records(result.records);
    return result;
}

ParseResult parse_dataset_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open dataset file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str());
}

void validate_records(const std::vector<DatasetRecord>& records) {
    for (const auto& r : records) {
        auto fail = [&](const std::string& what) {
            throw ValidationError(row_tag(r) + ": " + what);
        };
        if (r.evid != 0 && r.evid != 1)
            fail("EVID must be 0 or 1");
        if (r.mdv != 0 && r.mdv != 1)
            fail("MDV must be 0 or 1");
        if (r.comed != 0 && r.comed != 1)
            fail("COMED must be 0 or 1");
        if (!(r.bw > 0.0))
            fail("BW must be positive");
        if (r.time < 0.0)
            fail("TIME must be non-negative");
        if (r.evid == 1) {
            if (!(r.amt > 0.0))
                fail("dose row (EVID=1) must have AMT > 0");
            if (r.mdv != 1)
                fail("dose row (EVID=1) must have MDV=1");
        } else {
            if (r.amt != 0.0)
                fail("observation row (EVID=0) must have AMT=0");
        }
        if (r.mdv == 0) {
            if (!r.dv || !std::isfinite(*r.dv))
                fail("MDV=0 requires a finite DV");
            if (r.evid == 0 && (!r.dvid || (*r.dvid != 1 && *r.dvid != 2)))
                fail("observation row must have DVID 1 (PK) or 2 (PD)");
        }
    }
}

std::vector<Subject> build_subjects(const std::vector<DatasetRecord>& records) {
    std::vector<Subject> subjects;
    std::map<long, std::size_t> index;

    for (const auto& r : records) {
        auto it = index.find(r.id);
        if (it == index.end()) {
            index.emplace(r.id, subjects.size());
            Subject s;
            s.id = r.id;
            s.bw = r.bw;
            s.comed = r.comed;
            subjects.push_back(std::move(s));
            it = index.find(r.id);
        }
        Subject& s = subjects[it->second];
        if (s.bw != r.bw)
            throw ValidationError("subject " + std::to_string(r.id) +
                                  ": conflicting BW values (" + std::to_string(s.bw) +
                                  " vs " + std::to_string(r.bw) + ")");
        if (s.comed != r.comed)
            throw ValidationError("subject " + std::to_string(r.id) +
                                  ": conflicting COMED values");

        if (r.evid == 1) {
            s.dose_events.push_back({r.time, r.amt});
        } else if (r.mdv == 0) {
            Observation obs{r.time, *r.dv};
            if (*r.dvid == 1)
                s.pk_observations.push_back(obs);
            else
                s.pd_observations.push_back(obs);
        } else {
            ++s.n_ignored_rows;
        }
    }

    for (auto& s : subjects) {
        auto by_time = [](const auto& a, const auto& b) { return a.time < b.time; };
        std::stable_sort(s.dose_events.begin(), s.dose_events.end(), by_time);
        std::stable_sort(s.pk_observations.begin(), s.pk_observations.end(), by_time);
        std::stable_sort(s.pd_observations.begin(), s.pd_observations.end(), by_time);
        if (s.dose_events.empty() &&
            !(s.pk_observations.empty() && s.pd_observations.empty()))
            throw ValidationError("subject " + std::to_string(s.id) +
                                  " has observations but no dose event");
    }
    return subjects;
}

std::string write_records_csv(const std::vector<DatasetRecord>& records) {
    std::string out = "ID,BW,COMED,DOSE,TIME,DV,EVID,MDV,AMT,CMT,DVID\n";
    for (const auto& r : records) {
        append_double(out, static_cast<double>(r.id));
        out.push_back(',');
        append_double(out, r.bw);
        out.push_back(',');
        append_double(out, static_cast<double>(r.comed));
        out.push_back(',');
        append_double(out, r.dose);
        out.push_back(',');
        append_double(out, r.time);
        out.push_back(',');
        if (r.dv)
            append_double(out, *r.dv);
        else
            out.push_back('.');
        out.push_back(',');
        append_double(out, static_cast<double>(r.evid));
        out.push_back(',');
        append_double(out, static_cast<double>(r.mdv));
        out.push_back(',');
        append_double(out, r.amt);
        out.push_back(',');
        append_double(out, static_cast<double>(r.cmt));
        out.push_back(',');
        if (r.dvid)
            append_double(out, static_cast<double>(*r.dvid));
        else
            out.push_back('.');
        out.push_back('\n');
    }
    return out;
}

} // namespace qpkpd

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qpkpd {

// One row of a NONMEM-style dataset.  Eleven columns:
//   ID, BW, COMED, DOSE, TIME, DV, EVID, MDV, AMT, CMT, DVID
// EVID 1 = dose, 0 = observation; MDV 1 marks rows whose DV is missing.
// DVID tells PK (1) apart from PD (2) on observation rows; CMT is retained
// but not used for routing.
struct DatasetRecord {
    long id = 0;
    double bw = 0.0;            // body weight, kg
    int comed = 0;              // concomitant medication flag
    double dose = 0.0;          // nominal dose, mg
    double time = 0.0;          // hours since first administration
    std::optional<double> dv;   // dependent value, ng/mL; absent on dose rows
    int evid = 0;
    int mdv = 0;
    double amt = 0.0;           // administered amount, mg
    int cmt = 0;
    std::optional<int> dvid;

    int source_line = 0;        // 1-based line in the input, 0 if synthetic

    bool operator==(const DatasetRecord& o) const {
        return id == o.id && bw == o.bw && comed == o.comed && dose == o.dose &&
               time == o.time && dv == o.dv && evid == o.evid && mdv == o.mdv &&
               amt == o.amt && cmt == o.cmt && dvid == o.dvid;
    }
};

struct DoseEvent {
    double time = 0.0;          // h
    double amount = 0.0;        // mg
};

struct Observation {
    double time = 0.0;          // h
    double value = 0.0;         // ng/mL
};

// Per-subject timeline assembled from the flat record table.
struct Subject {
    long id = 0;
    double bw = 0.0;
    int comed = 0;
    std::vector<DoseEvent> dose_events;          // time-sorted
    std::vector<Observation> pk_observations;    // time-sorted, DVID=1
    std::vector<Observation> pd_observations;    // time-sorted, DVID=2
    std::size_t n_ignored_rows = 0;              // MDV=1 non-dose rows
};

struct ParseResult {
    std::vector<DatasetRecord> records;
    std::vector<std::string> warnings;   // e.g. extra columns that were ignored
};

// Parse comma-separated text with a header row naming the 11 columns in any
// order (case-insensitive).  Unknown columns are ignored with a warning.
// Throws SchemaError (missing column), ParseError (bad cell, with row and
// column), EmptyInputError (nothing but whitespace), ValidationError (a row
// violates the record invariants).
ParseResult parse_dataset(std::string_view text);

// Same, reading from a file.  Nonexistent/unreadable file throws ParseError.
ParseResult parse_dataset_file(const std::string& path);

// Check DatasetRecord invariants; throws ValidationError naming the line.
void validate_records(const std::vector<DatasetRecord>& records);

// Group validated records into subjects ordered by first appearance of each
// id.  Throws ValidationError for a subject with observations but no dose, or
// for conflicting BW/COMED within one subject.
std::vector<Subject> build_subjects(const std::vector<DatasetRecord>& records);

// Serialize records in canonical column order.  parse_dataset() on the result
// reproduces `records` exactly (shortest round-trip number formatting).
std::string write_records_csv(const std::vector<DatasetRecord>& records);

} // namespace qpkpd

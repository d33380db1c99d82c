#pragma once

// Dataset file format: a JSON metadata header on the first line, then one
// JSON record per line. Finite values round-trip bit-exactly (the JSON
// writer emits shortest-round-trip decimals).

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "censurv/core.hpp"

namespace censurv {

inline void save_dataset(const Dataset& d, std::ostream& os) {
  nlohmann::json header;
  header["censurv_dataset"] = 1;
  header["grid"] = d.grid.boundaries;
  header["attribute_names"] = d.attribute_names;
  header["context_names"] = d.context_names;
  header["context_kind"] = context_kind_name(d.context_kind);
  header["n_records"] = d.records.size();
  os << header.dump() << "\n";

  for (const auto& r : d.records) {
    nlohmann::json rec;
    rec["id"] = r.id;
    rec["attributes"] = r.attributes;
    if (d.context_kind == ContextKind::static_vector) {
      rec["context"] = std::get<StaticContext>(r.context).values;
    } else {
      const auto& se = std::get<SeriesContext>(r.context);
      nlohmann::json rows = nlohmann::json::array();
      for (int t = 0; t < se.steps; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int v = 0; v < se.vars; ++v) row.push_back(se.at(t, v));
        rows.push_back(std::move(row));
      }
      rec["context"] = std::move(rows);
    }
    rec["label"] = {{"time", r.label.observed_time},
                    {"event", r.label.event_observed}};
    os << rec.dump() << "\n";
  }
}

inline void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IO_ERROR, "cannot open " + path + " for writing");
  save_dataset(d, os);
}

inline Dataset load_dataset(std::istream& is, const std::string& origin = "<stream>") {
  std::string line;
  if (!std::getline(is, line))
    throw Error(ErrorCode::PARSE_ERROR, origin + ": empty dataset file");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::PARSE_ERROR, origin + " line 1: " + e.what());
  }
  if (!header.contains("censurv_dataset"))
    throw Error(ErrorCode::PARSE_ERROR, origin + ": missing dataset header");

  Dataset d;
  d.grid = TimeGrid(header.at("grid").get<std::vector<double>>());
  d.attribute_names = header.at("attribute_names").get<std::vector<std::string>>();
  d.context_names = header.at("context_names").get<std::vector<std::string>>();
  const std::string kind = header.at("context_kind").get<std::string>();
  if (kind == "static") {
    d.context_kind = ContextKind::static_vector;
  } else if (kind == "series") {
    d.context_kind = ContextKind::series;
  } else {
    throw Error(ErrorCode::PARSE_ERROR, origin + ": unknown context_kind " + kind);
  }

  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::PARSE_ERROR,
                  origin + " line " + std::to_string(line_no) + ": " + e.what());
    }
    PatientRecord r;
    r.id = rec.at("id").get<std::string>();
    r.attributes = rec.at("attributes").get<std::vector<double>>();
    if (d.context_kind == ContextKind::static_vector) {
      r.context = StaticContext{rec.at("context").get<std::vector<double>>()};
    } else {
      SeriesContext se;
      const auto& rows = rec.at("context");
      se.steps = static_cast<int>(rows.size());
      se.vars = d.d_c();
      se.values.reserve(static_cast<std::size_t>(se.steps) * se.vars);
      for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != se.vars)
          throw Error(ErrorCode::PARSE_ERROR,
                      origin + " line " + std::to_string(line_no) +
                          ": series row width mismatch");
        for (const auto& v : row) se.values.push_back(v.get<double>());
      }
      r.context = std::move(se);
    }
    r.label.observed_time = rec.at("label").at("time").get<double>();
    r.label.event_observed = rec.at("label").at("event").get<bool>();
    d.records.push_back(std::move(r));
  }

  const auto expected = header.at("n_records").get<std::size_t>();
  if (expected != d.records.size())
    throw Error(ErrorCode::PARSE_ERROR,
                origin + ": header declares " + std::to_string(expected) +
                    " records but file has " + std::to_string(d.records.size()));
  return d;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IO_ERROR, "cannot open " + path);
  return load_dataset(is, path);
}

}  // namespace censurv

#pragma once

// Model persistence. Schema:
//   {"method": "standard"|"classwise"|"clustered",
//    "alpha": real,
//    "thresholds": [real | "inf", ...],          // length n_classes
//    "cluster_map": [int | "null", ...] | null,  // length n_classes
//    "randomized": bool,
//    "seed": int,
//    "n_classes": int}
// Finite thresholds round-trip bit-exactly (shortest-round-trip decimal).

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "conformal/calibrate.hpp"
#include "conformal/common.hpp"

namespace conformal {

inline std::string model_to_json(const CalibratedModel& m) {
  nlohmann::json j;
  j["method"] = to_string(m.method);
  j["alpha"] = m.alpha;
  nlohmann::json thr = nlohmann::json::array();
  for (double t : m.thresholds) {
    if (t == kInf) {
      thr.push_back("inf");
    } else {
      thr.push_back(t);
    }
  }
  j["thresholds"] = std::move(thr);
  if (m.cluster_map) {
    nlohmann::json cm = nlohmann::json::array();
    for (int a : m.cluster_map->assignment) {
      if (a == kNullCluster) {
        cm.push_back("null");
      } else {
        cm.push_back(a);
      }
    }
    j["cluster_map"] = std::move(cm);
  } else {
    j["cluster_map"] = nullptr;
  }
  j["randomized"] = m.randomized;
  j["seed"] = m.seed;
  j["n_classes"] = m.n_classes;
  return j.dump(2);
}

inline CalibratedModel model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(parse_issue::bad_cell,
                      std::string("model file is not valid JSON: ") + e.what());
  }
  CalibratedModel m;
  try {
    const std::string method = j.at("method").get<std::string>();
    if (method == "standard") {
      m.method = Method::standard;
    } else if (method == "classwise") {
      m.method = Method::classwise;
    } else if (method == "clustered") {
      m.method = Method::clustered;
    } else {
      throw parse_error(parse_issue::schema, "unknown method '" + method + "'");
    }
    m.alpha = j.at("alpha").get<double>();
    m.n_classes = j.at("n_classes").get<int>();
    for (const auto& t : j.at("thresholds")) {
      if (t.is_string()) {
        if (t.get<std::string>() != "inf") {
          throw parse_error(parse_issue::schema,
                            "threshold entries must be numbers or \"inf\"");
        }
        m.thresholds.push_back(kInf);
      } else {
        m.thresholds.push_back(t.get<double>());
      }
    }
    const auto& cm = j.at("cluster_map");
    if (!cm.is_null()) {
      ClusterMap map;
      int max_id = -1;
      for (const auto& a : cm) {
        if (a.is_string()) {
          if (a.get<std::string>() != "null") {
            throw parse_error(parse_issue::schema,
                              "cluster_map entries must be ints or \"null\"");
          }
          map.assignment.push_back(kNullCluster);
        } else {
          const int id = a.get<int>();
          map.assignment.push_back(id);
          max_id = std::max(max_id, id);
        }
      }
      map.n_clusters = max_id + 1;
      m.cluster_map = std::move(map);
    }
    m.randomized = j.at("randomized").get<bool>();
    m.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(parse_issue::schema,
                      std::string("model field error: ") + e.what());
  }
  detail::require(m.alpha > 0.0 && m.alpha < 1.0, "model alpha outside (0,1)");
  detail::require(m.n_classes >= 1, "model n_classes must be >= 1");
  detail::require(m.thresholds.size() == static_cast<std::size_t>(m.n_classes),
                  "model thresholds length must equal n_classes");
  if (m.cluster_map) {
    detail::require(m.cluster_map->assignment.size() ==
                        static_cast<std::size_t>(m.n_classes),
                    "model cluster_map length must equal n_classes");
  }
  return m;
}

inline void save_model(const std::string& path, const CalibratedModel& m) {
  std::ofstream out(path);
  if (!out) throw parse_error(parse_issue::io, "cannot write '" + path + "'");
  out << model_to_json(m) << '\n';
}

inline CalibratedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error(parse_issue::io, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace conformal

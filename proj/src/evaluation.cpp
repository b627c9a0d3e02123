#include "crossview/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <set>

#include "crossview/error.hpp"
#include "io_util.hpp"

namespace crossview {

using nlohmann::json;

namespace {

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  const auto lines = detail::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      fn(json::parse(lines[i]));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedFile, path.string() + ": " + e.what(), i);
    }
  }
}

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string format_threshold(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f km", t);
  return buf;
}

}  // namespace

GroundTruth ground_truth_from_collections(const EmbeddingCollection& queries,
                                          const EmbeddingCollection& gallery) {
  GroundTruth gt;
  for (const auto& q : queries.records) gt.query_labels[q.id] = {q.label};
  for (const auto& g : gallery.records) gt.gallery_labels[g.id] = g.label;
  return gt;
}

GroundTruth load_ground_truth(const std::filesystem::path& query_labels,
                              const std::filesystem::path& gallery_labels) {
  GroundTruth gt;
  for_each_json_line(query_labels, [&](const json& doc) {
    auto& labels = gt.query_labels[doc.at("query_id").get<std::string>()];
    const auto& label = doc.at("label");
    if (label.is_array()) {
      for (const auto& l : label) labels.push_back(l.get<std::string>());
    } else {
      labels.push_back(label.get<std::string>());
    }
  });
  for_each_json_line(gallery_labels, [&](const json& doc) {
    gt.gallery_labels[doc.at("id").get<std::string>()] = doc.at("label").get<std::string>();
  });
  return gt;
}

std::map<std::string, GeoCoordinate> load_coordinates(const std::filesystem::path& path) {
  std::map<std::string, GeoCoordinate> out;
  std::size_t line = 0;
  for_each_json_line(path, [&](const json& doc) {
    const GeoCoordinate c{doc.at("lat").get<double>(), doc.at("lon").get<double>()};
    if (!is_valid(c)) throw Error(ErrorCode::MalformedFile, "coordinate out of range", line);
    out[doc.at("id").get<std::string>()] = c;
    ++line;
  });
  return out;
}

std::string coordinates_to_jsonl(const std::map<std::string, GeoCoordinate>& coords) {
  std::string out;
  for (const auto& [id, c] : coords) {
    out += json{{"id", id}, {"lat", c.lat}, {"lon", c.lon}}.dump() + "\n";
  }
  return out;
}

double recall_at_k(std::span<const RankedList> results, const GroundTruth& gt, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (results.empty()) return 0.0;
  const std::size_t needed = std::min(k, gt.gallery_labels.size());
  std::map<std::string, std::size_t> label_counts;
  for (const auto& [id, label] : gt.gallery_labels) ++label_counts[label];

  double total = 0.0;
  for (const auto& r : results) {
    const auto it = gt.query_labels.find(r.query_id);
    if (it == gt.query_labels.end() || it->second.empty()) {
      throw Error(ErrorCode::MissingGroundTruth, "no ground truth for query '" + r.query_id + "'");
    }
    if (r.hits.size() < needed) {
      throw Error(ErrorCode::InvalidArgument, "query '" + r.query_id + "' has " +
                                                  std::to_string(r.hits.size()) +
                                                  " hits, recall@" + std::to_string(k) +
                                                  " needs " + std::to_string(needed));
    }
    const std::set<std::string> relevant(it->second.begin(), it->second.end());
    std::size_t relevant_total = 0;
    for (const auto& label : relevant) {
      if (const auto c = label_counts.find(label); c != label_counts.end()) relevant_total += c->second;
    }
    if (relevant_total == 0) continue;  // nothing retrievable: contributes 0

    std::size_t found = 0;
    const std::size_t depth = std::min(k, r.hits.size());
    for (std::size_t i = 0; i < depth; ++i) {
      const auto g = gt.gallery_labels.find(r.hits[i].id);
      if (g == gt.gallery_labels.end()) {
        throw Error(ErrorCode::MissingGroundTruth, "no label for gallery item '" + r.hits[i].id + "'");
      }
      found += relevant.count(g->second);
    }
    total += static_cast<double>(found) / static_cast<double>(relevant_total);
  }
  return total / static_cast<double>(results.size());
}

std::size_t k_for_one_percent(std::size_t gallery_size) {
  return std::max<std::size_t>(1, gallery_size / 100);
}

LocalizationReport localization_accuracy(const std::map<std::string, GeoCoordinate>& predicted,
                                         const std::map<std::string, GeoCoordinate>& truth,
                                         std::span<const double> thresholds_km) {
  for (double t : thresholds_km) {
    if (!std::isfinite(t) || t < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "thresholds must be finite and non-negative");
    }
  }
  std::vector<double> distances;
  distances.reserve(predicted.size());
  for (const auto& [id, coord] : predicted) {
    const auto it = truth.find(id);
    if (it == truth.end()) {
      throw Error(ErrorCode::MissingGroundTruth, "no ground-truth coordinate for '" + id + "'");
    }
    distances.push_back(haversine_km(coord, it->second));
  }

  LocalizationReport report;
  report.query_count = truth.size();
  for (double t : thresholds_km) {
    const auto matched = static_cast<std::size_t>(
        std::count_if(distances.begin(), distances.end(), [t](double d) { return d <= t; }));
    const double acc = report.query_count == 0
                           ? 0.0
                           : 100.0 * static_cast<double>(matched) /
                                 static_cast<double>(report.query_count);
    report.rows.push_back({t, acc, matched});
  }
  return report;
}

EvaluationReport evaluate_run(std::span<const RankedList> results, const GroundTruth& gt,
                              std::span<const std::size_t> ks, std::size_t gallery_size) {
  if (gallery_size == 0) throw Error(ErrorCode::EmptyGallery, "gallery size must be >= 1");
  EvaluationReport report;
  report.query_count = results.size();
  report.gallery_size = gallery_size;
  for (std::size_t k : ks) report.recalls.push_back({k, recall_at_k(results, gt, k)});
  report.k_one_percent = k_for_one_percent(gallery_size);
  report.r_at_one_percent = recall_at_k(results, gt, report.k_one_percent);
  return report;
}

std::string report_to_json(const EvaluationReport& report) {
  json recalls = json::array();
  for (const auto& r : report.recalls) recalls.push_back({{"k", r.k}, {"recall", r.value}});
  json doc = {
      {"query_count", report.query_count},
      {"gallery_size", report.gallery_size},
      {"recall", std::move(recalls)},
      {"k_one_percent", report.k_one_percent},
      {"r_at_one_percent", report.r_at_one_percent},
  };
  if (report.localization) {
    json rows = json::array();
    for (const auto& row : report.localization->rows) {
      rows.push_back({{"threshold_km", row.threshold_km},
                      {"accuracy_percent", row.accuracy_percent},
                      {"matched", row.matched}});
    }
    doc["localization"] = {{"query_count", report.localization->query_count},
                           {"thresholds", std::move(rows)}};
  }
  return doc.dump(2) + "\n";
}

EvaluationReport report_from_json(const std::string& text) {
  EvaluationReport report;
  try {
    const json doc = json::parse(text);
    report.query_count = doc.at("query_count").get<std::size_t>();
    report.gallery_size = doc.at("gallery_size").get<std::size_t>();
    for (const auto& r : doc.at("recall")) {
      report.recalls.push_back({r.at("k").get<std::size_t>(), r.at("recall").get<double>()});
    }
    report.k_one_percent = doc.at("k_one_percent").get<std::size_t>();
    report.r_at_one_percent = doc.at("r_at_one_percent").get<double>();
    if (const auto it = doc.find("localization"); it != doc.end()) {
      LocalizationReport loc;
      loc.query_count = it->at("query_count").get<std::size_t>();
      for (const auto& row : it->at("thresholds")) {
        loc.rows.push_back({row.at("threshold_km").get<double>(),
                            row.at("accuracy_percent").get<double>(),
                            row.at("matched").get<std::size_t>()});
      }
      report.localization = std::move(loc);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("evaluation report: ") + e.what());
  }
  return report;
}

std::string format_recall_table(const EvaluationReport& report, bool include_one_percent) {
  std::vector<std::string> head;
  std::vector<std::string> vals;
  for (const auto& r : report.recalls) {
    head.push_back("R@" + std::to_string(r.k));
    vals.push_back(pct(r.value));
  }
  if (include_one_percent) {
    head.push_back("R@1%");
    vals.push_back(pct(report.r_at_one_percent));
  }
  std::string out = "Queries: " + std::to_string(report.query_count) +
                    "  Gallery: " + std::to_string(report.gallery_size) +
                    "  k(1%): " + std::to_string(report.k_one_percent) + "\n";
  std::string l1;
  std::string l2;
  for (std::size_t i = 0; i < head.size(); ++i) {
    const std::size_t w = std::max<std::size_t>(8, std::max(head[i].size(), vals[i].size()) + 2);
    l1 += pad(head[i], w);
    l2 += pad(vals[i], w);
  }
  while (!l1.empty() && l1.back() == ' ') l1.pop_back();
  while (!l2.empty() && l2.back() == ' ') l2.pop_back();
  return out + l1 + "\n" + l2 + "\n";
}

std::string format_localization_table(const LocalizationReport& report) {
  const std::string c0 = "Distance Threshold (km)";
  const std::string c1 = "Accuracy (%)";
  const std::string c2 = "Matched Samples (out of " + std::to_string(report.query_count) + ")";
  const std::size_t w0 = std::max({c0.size(), c1.size(), c2.size()}) + 2;
  std::string l0 = pad(c0, w0);
  std::string l1 = pad(c1, w0);
  std::string l2 = pad(c2, w0);
  for (const auto& row : report.rows) {
    const std::string t = format_threshold(row.threshold_km);
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.2f", row.accuracy_percent);
    const std::string m = std::to_string(row.matched);
    const std::size_t w = std::max({t.size(), std::string(acc).size(), m.size()}) + 2;
    l0 += pad(t, w);
    l1 += pad(acc, w);
    l2 += pad(m, w);
  }
  auto trim = [](std::string s) {
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
  };
  return trim(l0) + "\n" + trim(l1) + "\n" + trim(l2) + "\n";
}

}  // namespace crossview

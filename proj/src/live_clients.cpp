#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "crossview/live_clients.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <json.hpp>
#include <thread>

#include "crossview/error.hpp"
#include "crossview/text.hpp"
#include "io_util.hpp"

namespace crossview {

namespace fs = std::filesystem;
using nlohmann::json;

RateLimiter::RateLimiter(double requests_per_second)
    : rate_(requests_per_second),
      interval_(requests_per_second > 0.0
                    ? std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                          std::chrono::duration<double>(1.0 / requests_per_second))
                    : std::chrono::steady_clock::duration::zero()),
      next_(std::chrono::steady_clock::now()) {
  if (!std::isfinite(requests_per_second) || requests_per_second < 0.0) {
    throw Error(ErrorCode::ConfigError, "requests per second must be finite and >= 0");
  }
}

void RateLimiter::acquire() {
  if (rate_ <= 0.0) return;
  // Callers queue on the mutex so the spacing is measured from the moment
  // each caller is actually released, not from a reserved slot.
  std::lock_guard lock(mutex_);
  std::this_thread::sleep_until(next_);
  next_ = std::chrono::steady_clock::now() + interval_;
}

std::chrono::milliseconds RetryPolicy::delay_for(int retry) const {
  const double ms = static_cast<double>(base_delay.count()) * std::pow(multiplier, retry);
  return std::min(max_delay, std::chrono::milliseconds(static_cast<long long>(ms)));
}

void RequestLog::add(RequestLogEntry entry) {
  std::lock_guard lock(mutex_);
  entries_.push_back(std::move(entry));
}

std::vector<RequestLogEntry> RequestLog::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t RequestLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::ConfigError, "endpoint '" + url + "' is not an absolute http(s) URL");
  }
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(ErrorCode::ConfigError, "unsupported URL scheme in '" + url + "'");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string percent_encode(const std::string& s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == ',') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 0x0f];
    }
  }
  return out;
}

bool retryable(int status) { return status == 429 || status >= 500 || status < 0; }

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

}  // namespace

struct HttpTransport::Impl {
  ParsedUrl url;

  std::unique_ptr<httplib::Client> client(const HttpOptions& options) const {
    auto c = std::make_unique<httplib::Client>(url.origin);
    c->set_connection_timeout(options.timeout);
    c->set_read_timeout(options.timeout);
    c->set_write_timeout(options.timeout);
    c->set_follow_location(true);
    return c;
  }
};

HttpTransport::HttpTransport(std::string base_url, HttpOptions options)
    : base_url_(std::move(base_url)),
      options_(options),
      limiter_(options.requests_per_second),
      impl_(std::make_unique<Impl>(Impl{parse_url(base_url_)})) {
  if (options_.retry.max_retries < 0) throw Error(ErrorCode::ConfigError, "max_retries must be >= 0");
}

HttpTransport::~HttpTransport() = default;

namespace {

template <typename Send>
HttpResponse with_retries(const std::string& method, const std::string& target,
                          const HttpOptions& options, RateLimiter& limiter, RequestLog& log,
                          Send&& send) {
  int last_status = -1;
  std::string last_error;
  for (int attempt = 1; attempt <= options.retry.max_retries + 1; ++attempt) {
    limiter.acquire();
    RequestLogEntry entry{std::chrono::system_clock::now(), method, target, attempt, -1, {}};
    httplib::Result res = send();
    if (res) {
      entry.status = res->status;
    } else {
      entry.note = httplib::to_string(res.error());
      last_error = entry.note;
    }
    log.add(entry);
    last_status = entry.status;
    if (res && res->status >= 200 && res->status < 300) {
      return {res->status, res->body, res->get_header_value("Content-Type")};
    }
    if (!retryable(last_status)) break;
    if (attempt <= options.retry.max_retries) {
      std::this_thread::sleep_for(options.retry.delay_for(attempt - 1));
    }
  }
  if (last_status == 429) throw Error(ErrorCode::RateLimited, method + " " + target + ": HTTP 429");
  const std::string why = last_status < 0 ? last_error : "HTTP " + std::to_string(last_status);
  throw Error(ErrorCode::UpstreamFailure, method + " " + target + ": " + why);
}

}  // namespace

HttpResponse HttpTransport::get(const std::multimap<std::string, std::string>& params,
                                const std::vector<std::string>& redact) {
  httplib::Params query(params.begin(), params.end());
  std::string target = impl_->url.path;
  char sep = target.find('?') == std::string::npos ? '?' : '&';
  for (const auto& [k, v] : params) {
    const bool hidden = std::find(redact.begin(), redact.end(), k) != redact.end();
    target += sep + k + "=" + (hidden ? std::string("REDACTED") : percent_encode(v));
    sep = '&';
  }
  return with_retries("GET", target, options_, limiter_, log_, [&] {
    return impl_->client(options_)->Get(impl_->url.path, query, httplib::Headers{});
  });
}

HttpResponse HttpTransport::post_json(const std::string& body,
                                      const std::map<std::string, std::string>& headers) {
  httplib::Headers h(headers.begin(), headers.end());
  return with_retries("POST", impl_->url.path, options_, limiter_, log_, [&] {
    return impl_->client(options_)->Post(impl_->url.path, h, body, "application/json");
  });
}

LiveGeocoder::LiveGeocoder(std::string endpoint, std::string api_key, HttpOptions options)
    : api_key_(std::move(api_key)), http_(std::move(endpoint), options) {}

GeoCoordinate LiveGeocoder::geocode(const PlaceName& place) {
  const auto resp = http_.get({{"address", place.name}, {"key", api_key_}}, {"key"});
  json doc;
  try {
    doc = json::parse(resp.body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::UpstreamFailure, std::string("geocoder returned invalid JSON: ") + e.what());
  }
  const std::string status = doc.value("status", "OK");
  const auto results = doc.value("results", json::array());
  if (status == "ZERO_RESULTS" || results.empty()) {
    throw Error(ErrorCode::PlaceNotFound, "geocoder has no result for '" + place.name + "'");
  }
  if (status != "OK") throw Error(ErrorCode::UpstreamFailure, "geocoder status " + status);
  const auto& first = results.front();
  if (results.size() > 1) {
    if (first.contains("confidence") && first["confidence"].is_number() &&
        first["confidence"].get<double>() <= 0.0) {
      throw Error(ErrorCode::AmbiguousPlace, "zero-confidence match among " +
                                                 std::to_string(results.size()) + " results for '" +
                                                 place.name + "'");
    }
    http_.log().add({std::chrono::system_clock::now(), "NOTE", place.name, 0, 0,
                     std::to_string(results.size()) + " geocode results, using the first"});
  }
  try {
    const auto& loc = first.at("geometry").at("location");
    const GeoCoordinate c{loc.at("lat").get<double>(), loc.at("lng").get<double>()};
    if (!is_valid(c)) throw Error(ErrorCode::UpstreamFailure, "geocoder returned an invalid coordinate");
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::UpstreamFailure, std::string("geocoder result malformed: ") + e.what());
  }
}

LiveTileClient::LiveTileClient(std::string endpoint, std::string api_key, HttpOptions options)
    : api_key_(std::move(api_key)), http_(std::move(endpoint), options) {}

SatelliteTile LiveTileClient::fetch_tile(const GeoCoordinate& center, const TileSpec& spec,
                                         const fs::path& out_dir) {
  validate_tile_spec(spec);
  if (!is_valid(center)) throw Error(ErrorCode::InvalidArgument, "tile center out of range");
  const std::string key = tile_key(center, spec.zoom);
  const auto resp = http_.get({{"center", detail::format_double(center.lat) + "," + detail::format_double(center.lon)},
                               {"zoom", std::to_string(spec.zoom)},
                               {"size", std::to_string(spec.width_px) + "x" + std::to_string(spec.height_px)},
                               {"maptype", spec.map_type},
                               {"key", api_key_}},
                              {"key"});
  if (resp.body.empty()) throw Error(ErrorCode::TileUnavailable, "empty tile response for " + key);
  std::string ext = ".png";
  if (resp.content_type.find("jpeg") != std::string::npos) ext = ".jpg";
  SatelliteTile tile;
  tile.center = center;
  tile.spec = spec;
  tile.image_ref = out_dir / (key + ext);
  detail::write_file(tile.image_ref, resp.body);
  tile.provenance = {"staticmap", utc_timestamp()};
  return tile;
}

LiveLlm::LiveLlm(std::string endpoint, std::string api_key, HttpOptions options)
    : api_key_(std::move(api_key)), http_(std::move(endpoint), options) {}

std::string LiveLlm::complete(const std::string& prompt) {
  std::map<std::string, std::string> headers;
  if (!api_key_.empty()) headers["Authorization"] = "Bearer " + api_key_;
  const auto resp = http_.post_json(json{{"prompt", prompt}}.dump(), headers);
  const json doc = json::parse(resp.body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return resp.body;
  for (const char* field : {"text", "completion", "response"}) {
    if (doc.contains(field) && doc[field].is_string()) return doc[field].get<std::string>();
  }
  if (doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty()) {
    const auto& c = doc["choices"][0];
    if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
    if (c.contains("message") && c["message"].contains("content")) {
      return c["message"]["content"].get<std::string>();
    }
  }
  throw Error(ErrorCode::UpstreamFailure, "completion response has no text field");
}

LiveImageSearch::LiveImageSearch(std::string endpoint, std::size_t snippet_cap, HttpOptions options)
    : snippet_cap_(snippet_cap), options_(options), http_(std::move(endpoint), options) {}

ContextDocuments LiveImageSearch::image_search(const std::string& image_ref) {
  const auto resp = http_.get({{"image", image_ref}});
  ContextDocuments docs;
  docs.source_image = image_ref;
  try {
    const auto doc = json::parse(resp.body);
    for (const auto& s : doc.at("snippets")) {
      if (docs.snippets.size() >= snippet_cap_) break;
      docs.snippets.push_back({s.value("url", ""), s.value("title", ""), s.value("body", "")});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::UpstreamFailure, std::string("image search response malformed: ") + e.what());
  }
  docs.collected_at = utc_timestamp();
  return docs;
}

void LiveImageSearch::fetch_image(const std::string& reference, const fs::path& dest) {
  if (reference.rfind("http://", 0) != 0 && reference.rfind("https://", 0) != 0) {
    throw Error(ErrorCode::UnknownImage, "not a downloadable URL: '" + reference + "'");
  }
  HttpTransport download(reference, options_);
  const auto resp = download.get({});
  detail::write_file(dest, resp.body);
}

ServiceClients make_live_clients(const LiveConfig& config) {
  std::vector<std::string> missing;
  auto required = [&](const char* name) {
    std::string v = env_or_empty(name);
    if (v.empty()) missing.emplace_back(name);
    return v;
  };
  const std::string geocode_key = required("GEOCODE_API_KEY");
  const std::string staticmap_key = required("STATICMAP_API_KEY");
  const std::string llm_endpoint = required("LLM_ENDPOINT");
  const std::string search_endpoint = required("IMAGESEARCH_ENDPOINT");
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw Error(ErrorCode::ConfigError, "live clients need environment variable(s): " + names);
  }
  std::string geocode_endpoint = env_or_empty("GEOCODE_ENDPOINT");
  if (geocode_endpoint.empty()) geocode_endpoint = config.default_geocode_endpoint;
  std::string staticmap_endpoint = env_or_empty("STATICMAP_ENDPOINT");
  if (staticmap_endpoint.empty()) staticmap_endpoint = config.default_staticmap_endpoint;

  return {std::make_shared<LiveImageSearch>(search_endpoint, config.snippet_cap, config.http),
          std::make_shared<LiveLlm>(llm_endpoint, env_or_empty("LLM_API_KEY"), config.http),
          std::make_shared<LiveGeocoder>(geocode_endpoint, geocode_key, config.http),
          std::make_shared<LiveTileClient>(staticmap_endpoint, staticmap_key, config.http)};
}

}  // namespace crossview

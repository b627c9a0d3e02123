#pragma once

#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "crossview/geo_clients.hpp"

namespace crossview {

/// Spaces request starts at least 1/rate seconds apart. A rate of 0 disables
/// limiting. Safe for concurrent callers.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second);

  void acquire();
  double rate() const noexcept { return rate_; }

 private:
  double rate_;
  std::chrono::steady_clock::duration interval_;
  std::chrono::steady_clock::time_point next_;
  std::mutex mutex_;
};

struct RetryPolicy {
  /// Retries after the first attempt; total attempts = max_retries + 1.
  int max_retries = 3;
  std::chrono::milliseconds base_delay{250};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{8000};

  std::chrono::milliseconds delay_for(int retry) const;
};

struct RequestLogEntry {
  std::chrono::system_clock::time_point sent_at;
  std::string method;
  /// Path and query with credentials redacted.
  std::string target;
  int attempt = 0;
  /// HTTP status, or -1 for a transport failure.
  int status = 0;
  std::string note;
};

class RequestLog {
 public:
  void add(RequestLogEntry entry);
  std::vector<RequestLogEntry> entries() const;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::vector<RequestLogEntry> entries_;
};

struct HttpOptions {
  double requests_per_second = 5.0;
  RetryPolicy retry;
  std::chrono::seconds timeout{30};
};

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string content_type;
};

/// Rate-limited, retrying HTTP access to a single base URL.
///
/// 429, 5xx and transport errors are retried with exponential backoff; other
/// non-2xx statuses fail immediately. Exhausted retries throw RateLimited
/// (last status 429) or UpstreamFailure.
class HttpTransport {
 public:
  HttpTransport(std::string base_url, HttpOptions options);
  ~HttpTransport();
  HttpTransport(const HttpTransport&) = delete;
  HttpTransport& operator=(const HttpTransport&) = delete;

  HttpResponse get(const std::multimap<std::string, std::string>& params,
                   const std::vector<std::string>& redact = {});
  HttpResponse post_json(const std::string& body,
                         const std::map<std::string, std::string>& headers = {});

  const RequestLog& log() const noexcept { return log_; }
  RequestLog& log() noexcept { return log_; }
  const std::string& base_url() const noexcept { return base_url_; }

 private:
  struct Impl;
  std::string base_url_;
  HttpOptions options_;
  RateLimiter limiter_;
  RequestLog log_;
  std::unique_ptr<Impl> impl_;
};

/// Google-style geocoder: GET ?address=<name>&key=<key>, JSON
/// {"status", "results": [{"geometry": {"location": {"lat", "lng"}}}]}.
class LiveGeocoder final : public GeocodeClient {
 public:
  LiveGeocoder(std::string endpoint, std::string api_key, HttpOptions options = {});
  GeoCoordinate geocode(const PlaceName& place) override;
  const RequestLog& log() const noexcept { return http_.log(); }

 private:
  std::string api_key_;
  HttpTransport http_;
};

/// Static map API: GET ?center=lat,lon&zoom=&size=WxH&maptype=satellite&key=.
class LiveTileClient final : public TileClient {
 public:
  LiveTileClient(std::string endpoint, std::string api_key, HttpOptions options = {});
  SatelliteTile fetch_tile(const GeoCoordinate& center, const TileSpec& spec,
                           const std::filesystem::path& out_dir) override;
  const RequestLog& log() const noexcept { return http_.log(); }

 private:
  std::string api_key_;
  HttpTransport http_;
};

/// POSTs {"prompt": text}. The answer is read from "text", "completion",
/// "response" or choices[0].text/message.content; a non-JSON body is used as is.
class LiveLlm final : public LlmClient {
 public:
  LiveLlm(std::string endpoint, std::string api_key, HttpOptions options = {});
  std::string complete(const std::string& prompt) override;
  const RequestLog& log() const noexcept { return http_.log(); }

 private:
  std::string api_key_;
  HttpTransport http_;
};

/// GET ?image=<ref>, JSON {"snippets": [{"url","title","body"}...]}, truncated
/// to `snippet_cap`. fetch_image downloads absolute http(s) URLs.
class LiveImageSearch final : public ImageSearchClient {
 public:
  LiveImageSearch(std::string endpoint, std::size_t snippet_cap = 20, HttpOptions options = {});
  ContextDocuments image_search(const std::string& image_ref) override;
  void fetch_image(const std::string& reference, const std::filesystem::path& dest) override;
  const RequestLog& log() const noexcept { return http_.log(); }

 private:
  std::size_t snippet_cap_;
  HttpOptions options_;
  HttpTransport http_;
};

struct LiveConfig {
  HttpOptions http;
  std::size_t snippet_cap = 20;
  std::string default_geocode_endpoint = "https://maps.googleapis.com/maps/api/geocode/json";
  std::string default_staticmap_endpoint = "https://maps.googleapis.com/maps/api/staticmap";
};

/// Credentials and endpoints come from the environment: GEOCODE_API_KEY,
/// STATICMAP_API_KEY, LLM_ENDPOINT, IMAGESEARCH_ENDPOINT (required),
/// LLM_API_KEY, GEOCODE_ENDPOINT, STATICMAP_ENDPOINT (optional). Throws
/// ConfigError naming every missing required variable.
ServiceClients make_live_clients(const LiveConfig& config = {});

}  // namespace crossview

#include "usqm/study_server.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <httplib.h>
#include <json.hpp>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "usqm/errors.hpp"
#include "usqm/log.hpp"
#include "usqm/random.hpp"

namespace usqm {

using nlohmann::json;

namespace {

constexpr char kTokenAlphabet[] = "BCDFGHJKLMNPQRSTVWXZ";
constexpr std::size_t kTokenLength = 24;

const char* kPlaceholderIndex =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>2AFC study</title></head>"
    "<body><p>The study UI is not installed. The JSON API is available at /api/next and "
    "/api/choice.</p></body></html>";

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::string content_type_for(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".pgm") return "image/x-portable-graymap";
  return "application/octet-stream";
}

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply_json(res, status, {{"error", message}});
}

}  // namespace

struct StudyServer::Impl {
  PairManifest manifest;
  StudyServerOptions options;
  httplib::Server http;
  std::thread worker;

  mutable std::mutex mutex;  // guards `answered_by` and the log descriptor
  std::map<std::string, std::set<std::string>> answered_by;
  int log_fd = -1;

  std::map<std::string, std::string> token_to_path;
  std::map<std::string, std::pair<std::string, std::string>> pair_tokens;  // left, right

  Impl(PairManifest m, StudyServerOptions o) : manifest(std::move(m)), options(std::move(o)) {
    if (options.responses_path.empty()) fail(ErrorKind::Io, "no response log path given");
    for (const auto& r : read_responses(options.responses_path)) {
      if (!manifest.find(r.pair_id)) {
        fail(ErrorKind::Schema, options.responses_path + ": response for unknown pair '" +
                                    r.pair_id + "'");
      }
      answered_by[r.reader].insert(r.pair_id);
    }
    log_fd = ::open(options.responses_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (log_fd < 0) fail(ErrorKind::Io, "cannot open response log " + options.responses_path);
    make_tokens();
    routes();
  }

  ~Impl() {
    if (log_fd >= 0) ::close(log_fd);
  }

  void make_tokens() {
    const std::uint64_t secret =
        options.token_secret ? *options.token_secret : std::random_device{}() * 0x100000001ULL;
    Rng rng(secret);
    auto token = [&] {
      std::string t;
      for (std::size_t i = 0; i < kTokenLength; ++i) {
        t += kTokenAlphabet[rng.below(sizeof kTokenAlphabet - 1)];
      }
      return t;
    };
    for (const auto& p : manifest.pairs) {
      std::string l = token();
      std::string r = token();
      token_to_path[l] = p.left().output_path;
      token_to_path[r] = p.right().output_path;
      pair_tokens[p.pair_id] = {l, r};
    }
  }

  void append(const ResponseRecord& r) {
    const std::string line = response_to_json_line(r);
    std::size_t off = 0;
    while (off < line.size()) {
      const auto n = ::write(log_fd, line.data() + off, line.size() - off);
      if (n < 0) fail(ErrorKind::Io, "write failed on " + options.responses_path);
      off += static_cast<std::size_t>(n);
    }
    if (::fsync(log_fd) != 0) fail(ErrorKind::Io, "fsync failed on " + options.responses_path);
  }

  void routes() {
    http.Get("/api/next", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string reader = req.get_param_value("reader");
      if (reader.empty()) return reply_error(res, 400, "missing reader");
      std::lock_guard lock(mutex);
      const auto& done = answered_by[reader];
      const std::size_t total = manifest.pairs.size();
      for (const auto& p : manifest.pairs) {
        if (done.contains(p.pair_id)) continue;
        const auto& [l, r] = pair_tokens.at(p.pair_id);
        return reply_json(res, 200,
                          {{"done", false},
                           {"pair_id", p.pair_id},
                           {"left", "/img/" + l},
                           {"right", "/img/" + r},
                           {"answered", done.size()},
                           {"total", total}});
      }
      reply_json(res, 200, {{"done", true}, {"answered", done.size()}, {"total", total}});
    });

    http.Get(R"(/img/([A-Z]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto it = token_to_path.find(req.matches[1].str());
      if (it == token_to_path.end()) return reply_error(res, 404, "unknown image");
      try {
        const auto bytes = read_file(it->second);
        res.set_content(std::string(bytes.begin(), bytes.end()), content_type_for(it->second));
        res.set_header("Cache-Control", "no-store");
      } catch (const Error& e) {
        log_warn(e.what());
        reply_error(res, 500, "image unavailable");
      }
    });

    http.Post("/api/choice", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        return reply_error(res, 400, "body is not JSON");
      }
      if (!body.is_object() || !body.contains("pair_id") || !body["pair_id"].is_string() ||
          !body.contains("choice") || !body["choice"].is_string() ||
          !body.contains("reader") || !body["reader"].is_string()) {
        return reply_error(res, 400, "expected {pair_id, choice, reader} strings");
      }
      ResponseRecord r{body["pair_id"], body["reader"], body["choice"], now_ms()};
      if (r.choice != "A" && r.choice != "B") return reply_error(res, 400, "choice must be A or B");
      if (r.reader.empty()) return reply_error(res, 400, "empty reader");
      if (!manifest.find(r.pair_id)) return reply_error(res, 404, "unknown pair");
      std::lock_guard lock(mutex);
      auto& done = answered_by[r.reader];
      if (done.contains(r.pair_id)) return reply_error(res, 409, "pair already answered");
      try {
        append(r);
      } catch (const Error& e) {
        log_warn(e.what());
        return reply_error(res, 500, "could not record response");
      }
      done.insert(r.pair_id);
      reply_json(res, 200, {{"accepted", true}, {"pair_id", r.pair_id}});
    });

    if (!options.static_dir.empty()) {
      if (!http.set_mount_point("/", options.static_dir)) {
        fail(ErrorKind::Io, "cannot mount static directory " + options.static_dir);
      }
    } else {
      http.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(kPlaceholderIndex, "text/html");
      });
    }
  }
};

StudyServer::StudyServer(PairManifest manifest, StudyServerOptions options)
    : impl_(std::make_unique<Impl>(std::move(manifest), std::move(options))) {}

StudyServer::~StudyServer() { stop(); }

int StudyServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->http.bind_to_any_port(host);
  } else if (!impl_->http.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) fail(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
  impl_->worker = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return bound;
}

void StudyServer::listen(const std::string& host, int port) {
  if (!impl_->http.listen(host, port)) {
    fail(ErrorKind::Io, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

void StudyServer::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

std::size_t StudyServer::answered(const std::string& reader) const {
  std::lock_guard lock(impl_->mutex);
  const auto it = impl_->answered_by.find(reader);
  return it == impl_->answered_by.end() ? 0 : it->second.size();
}

}  // namespace usqm

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "usqm/study.hpp"

namespace usqm {

struct StudyServerOptions {
  std::string responses_path;
  std::string static_dir;  // mounted at "/" when non-empty
  std::optional<std::uint64_t> token_secret;  // random when unset
};

/// HTTP backend for the blinded 2AFC study.
///   GET  /api/next?reader=ID   next unanswered pair for that reader
///   GET  /img/{token}          image bytes behind an opaque token
///   POST /api/choice           {"pair_id", "choice": "A"|"B", "reader"}
/// Accepted choices are appended to the response log; a restarted server
/// resumes from that log.
class StudyServer {
 public:
  StudyServer(PairManifest manifest, StudyServerOptions options);
  ~StudyServer();
  StudyServer(const StudyServer&) = delete;
  StudyServer& operator=(const StudyServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks on the calling thread.
  void listen(const std::string& host, int port);
  void stop();

  std::size_t answered(const std::string& reader) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace usqm

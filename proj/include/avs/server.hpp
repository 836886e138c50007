#pragma once
/**
 * @file server.hpp
 * @brief Environment-as-a-service. External policies fetch query views,
 *        submit action strings and receive the next view and reward over
 *        HTTP/JSON. Sessions persist as append-only JSONL logs and are
 *        rebuilt by replaying the log on restart.
 *
 * On-disk layout under the data directory:
 *   sessions/<id>/session.json   id, dataset, mode, seed, creation time
 *   sessions/<id>/log.jsonl      one line per acknowledged act
 */

#include <avs/curate.hpp>
#include <avs/eval.hpp>
#include <avs/reward.hpp>

#include <httplib.h>
#include <json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace avs {

namespace fs = std::filesystem;

[[nodiscard]] inline std::string base64_encode(std::string_view in) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const auto n = (std::uint32_t(std::uint8_t(in[i])) << 16) | (std::uint32_t(std::uint8_t(in[i + 1])) << 8) | std::uint8_t(in[i + 2]);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  if (const std::size_t rest = in.size() - i; rest > 0) {
    std::uint32_t n = std::uint32_t(std::uint8_t(in[i])) << 16;
    if (rest == 2) n |= std::uint32_t(std::uint8_t(in[i + 1])) << 8;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += rest == 2 ? kAlphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

[[nodiscard]] inline std::string base64_decode(std::string_view in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4 != 0) throw IoError("base64: length not a multiple of 4");
  std::string out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = in[i + k];
      if (c == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else if ((v[k] = val(c)) < 0 || pad > 0) {
        throw IoError("base64: invalid character");
      }
    }
    const std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out += char((n >> 16) & 255);
    if (pad < 2) out += char((n >> 8) & 255);
    if (pad < 1) out += char(n & 255);
  }
  return out;
}

[[nodiscard]] inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Status-carrying error for the request layer.
struct ApiError : std::runtime_error {
  int status;
  nlohmann::json extra;
  ApiError(int s, const std::string& msg, nlohmann::json x = nlohmann::json::object())
      : std::runtime_error(msg), status(s), extra(std::move(x)) {}
};

namespace detail {

/// Append-only file whose writes are on stable storage before returning.
class DurableLog {
public:
  DurableLog() = default;
  explicit DurableLog(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open log " + path.string());
  }
  DurableLog(const DurableLog&) = delete;
  DurableLog& operator=(const DurableLog&) = delete;
  DurableLog(DurableLog&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  DurableLog& operator=(DurableLog&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~DurableLog() { close(); }

  void append_line(const std::string& line) {
    const std::string data = line + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw IoError("log write failed");
      }
      off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw IoError("log fsync failed");
  }

private:
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  int fd_ = -1;
};

/// Replaces `path` atomically with fully synced contents.
inline void write_file_durable(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open " + tmp.string());
  const bool ok = ::write(fd, bytes.data(), bytes.size()) == static_cast<ssize_t>(bytes.size()) && ::fsync(fd) == 0;
  ::close(fd);
  if (!ok) throw IoError("cannot write " + tmp.string());
  fs::rename(tmp, path);
  if (const int dfd = ::open(path.parent_path().c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC); dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

[[nodiscard]] inline std::string random_token() {
  std::random_device rd;
  std::string out;
  for (int i = 0; i < 4; ++i) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(rd()));
    out += buf;
  }
  return out;
}

[[nodiscard]] inline bool safe_name(const std::string& s) {
  if (s.empty() || s.size() > 128 || s == "." || s == "..") return false;
  for (const char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return true;
}

}  // namespace detail

/// One client's pass over a dataset.
class Session {
public:
  Session(std::string id, std::string dataset_name, std::shared_ptr<const Dataset> ds, EvalMode mode, std::uint64_t seed,
          std::string created, fs::path dir)
      : id_(std::move(id)), dataset_name_(std::move(dataset_name)), ds_(std::move(ds)), mode_(mode), seed_(seed),
        created_(std::move(created)), updated_(created_), dir_(std::move(dir)) {
    order_.resize(ds_->records.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (seed_ != 0) Rng(derive_seed(seed_, 0x5e55)).shuffle(order_);
  }

  std::mutex mutex;

  [[nodiscard]] const std::string& id() const noexcept { return id_; }
  [[nodiscard]] const EvalMode& mode() const noexcept { return mode_; }
  [[nodiscard]] std::size_t cursor() const noexcept { return cursor_; }
  [[nodiscard]] std::size_t size() const noexcept { return order_.size(); }
  [[nodiscard]] bool exhausted() const noexcept { return cursor_ >= order_.size(); }

  [[nodiscard]] nlohmann::json meta() const {
    return {{"session_id", id_}, {"dataset", dataset_name_}, {"mode", mode_.label()}, {"seed", seed_}, {"created", created_}};
  }

  [[nodiscard]] nlohmann::json summary() const {
    nlohmann::json j = meta();
    j["cursor"] = cursor_;
    j["sample_count"] = order_.size();
    j["completed"] = outcomes_.size();
    j["updated"] = updated_;
    return j;
  }

  void open_log() { log_ = detail::DurableLog(dir_ / "log.jsonl"); }

  /// Current query (or in-progress) observation; never includes poses or answers.
  [[nodiscard]] nlohmann::json next() {
    if (exhausted()) throw ApiError(204, "exhausted");
    Episode& ep = episode();
    const SampleRecord& r = ep.record();
    nlohmann::json j = {{"sample_id", r.sample_id},
                        {"sample_index", cursor_},
                        {"question", r.question},
                        {"question_type", to_string(r.question_type)},
                        {"turn", ep.turns().size()},
                        {"turns_remaining", ep.turns_remaining()},
                        {"width", ep.current_view().width},
                        {"height", ep.current_view().height},
                        {"view", base64_encode(encode_pgm(ep.current_view()))},
                        {"view_preview", base64_encode(encode_ppm_preview(ep.current_view()))}};
    if (!r.options.empty()) j["options"] = r.options;
    return j;
  }

  /// Executes one turn. The log entry is durable before this returns.
  [[nodiscard]] nlohmann::json act(const std::string& sample_id, const std::string& text) {
    check_current(sample_id);
    Episode& ep = episode();
    const TurnRecord turn = ep.act(text);
    const std::string now = utc_timestamp();
    if (log_) {
      nlohmann::json entry = {{"seq", seq_},
                              {"sample_index", cursor_},
                              {"sample_id", sample_id},
                              {"turn", ep.turns().size() - 1},
                              {"text", text},
                              {"reward", turn.reward},
                              {"time", now}};
      log_->append_line(entry.dump());
    }
    ++seq_;
    updated_ = now;
    nlohmann::json j = {{"sample_id", sample_id},
                        {"turn", ep.turns().size() - 1},
                        {"parsed", turn.parsed ? nlohmann::json(*turn.parsed) : nlohmann::json(nullptr)},
                        {"executed", turn.executed},
                        {"collided", turn.collided},
                        {"reward", turn.reward},
                        {"answerable", turn.reward.verifier == 1},
                        {"turns_remaining", ep.turns_remaining()},
                        {"view", base64_encode(encode_pgm(ep.current_view()))}};
    const bool done = ep.finished();
    j["sample_done"] = done;
    if (done) {
      j["outcome"] = finish_current();
    }
    return j;
  }

  /// Re-applies a logged act during recovery.
  void replay(const nlohmann::json& entry) {
    const auto idx = entry.at("sample_index").get<std::size_t>();
    if (idx != cursor_) throw IoError("session " + id_ + ": log out of order at seq " + std::to_string(seq_));
    (void)act(entry.at("sample_id").get<std::string>(), entry.at("text").get<std::string>());
    updated_ = entry.value("time", updated_);
  }

  [[nodiscard]] EvalReport report() const {
    std::vector<std::pair<std::size_t, const SampleOutcome*>> done;
    for (const auto& [idx, o] : outcomes_) done.emplace_back(idx, &o);
    std::sort(done.begin(), done.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<SampleOutcome> ordered;
    std::vector<std::size_t> indices;
    for (const auto& [idx, o] : done) {
      ordered.push_back(*o);
      indices.push_back(idx);
    }
    return aggregate_report(ordered, mode_, baseline_rows(*ds_, indices, ds_->verifier));
  }

  /// Every acknowledged act as `{sample_id, text}` JSONL, in dataset order.
  [[nodiscard]] std::string export_actions() const {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    for (const auto& [idx, o] : outcomes_) {
      std::vector<std::string> texts;
      for (const auto& t : o.turns) texts.push_back(t.text);
      rows.emplace_back(idx, std::move(texts));
    }
    if (current_) {
      std::vector<std::string> texts;
      for (const auto& t : current_->turns()) texts.push_back(t.text);
      if (!texts.empty()) rows.emplace_back(order_[cursor_], std::move(texts));
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::string out;
    for (const auto& [idx, texts] : rows)
      for (const auto& t : texts) out += nlohmann::json{{"sample_id", ds_->records[idx].sample_id}, {"text", t}}.dump() + "\n";
    return out;
  }

private:
  Episode& episode() {
    if (!current_) {
      const SampleRecord& r = ds_->records[order_[cursor_]];
      current_.emplace(ds_->scene_for(r), r, ds_->rollout_config(), mode_.max_turns, ds_->load_view(r.view_qry));
    }
    return *current_;
  }

  void check_current(const std::string& sample_id) {
    if (!ds_->index_of(sample_id)) throw ApiError(404, "unknown sample '" + sample_id + "'");
    if (exhausted()) throw ApiError(409, "session has no remaining samples");
    const std::string& expected = ds_->records[order_[cursor_]].sample_id;
    if (sample_id != expected) throw ApiError(409, "out-of-order sample", {{"expected_sample_id", expected}});
  }

  nlohmann::json finish_current() {
    SampleOutcome o = outcome_of(*current_);
    nlohmann::json j = o;
    outcomes_.emplace(order_[cursor_], std::move(o));
    current_.reset();
    ++cursor_;
    return j;
  }

  std::string id_;
  std::string dataset_name_;
  std::shared_ptr<const Dataset> ds_;
  EvalMode mode_;
  std::uint64_t seed_;
  std::string created_;
  std::string updated_;
  fs::path dir_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t seq_ = 0;
  std::optional<Episode> current_;
  std::map<std::size_t, SampleOutcome> outcomes_;
  std::optional<detail::DurableLog> log_;
};

struct ServerConfig {
  fs::path datasets_root;  ///< each subdirectory is a dataset, addressed by name
  fs::path data_dir;       ///< session persistence
  std::string host = "127.0.0.1";
  int port = 8080;         ///< 0 picks a free port
  int threads = 4;
};

/// Resolves the data directory: AVS_DATA_DIR wins over the configured path.
[[nodiscard]] inline fs::path resolve_data_dir(const fs::path& configured) {
  if (const char* env = std::getenv("AVS_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return configured;
}

/// Session registry independent of the transport.
class SessionManager {
public:
  explicit SessionManager(fs::path datasets_root, fs::path data_dir)
      : datasets_root_(std::move(datasets_root)), data_dir_(std::move(data_dir)) {
    fs::create_directories(data_dir_ / "sessions");
  }

  /// Rebuilds every persisted session; returns how many were restored.
  std::size_t recover(std::ostream& log = std::cerr) {
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(data_dir_ / "sessions")) {
      if (!entry.is_directory()) continue;
      try {
        restore(entry.path());
        ++n;
      } catch (const std::exception& e) {
        log << "warning: cannot restore session " << entry.path().filename().string() << ": " << e.what() << "\n";
      }
    }
    return n;
  }

  [[nodiscard]] nlohmann::json create(const nlohmann::json& body) {
    if (!body.is_object() || !body.contains("dataset") || !body["dataset"].is_string())
      throw ApiError(400, "body must contain a string 'dataset'");
    const std::string name = body["dataset"].get<std::string>();
    EvalMode mode;
    try {
      mode = parse_eval_mode(body.value("mode", std::string("single")));
    } catch (const std::exception& e) {
      throw ApiError(422, e.what());
    }
    std::uint64_t seed = 0;
    if (body.contains("seed")) {
      if (!body["seed"].is_number_unsigned()) throw ApiError(422, "seed must be a non-negative integer");
      seed = body["seed"].get<std::uint64_t>();
    }
    auto ds = dataset(name);
    std::string id;
    fs::path dir;
    {
      std::lock_guard lock(registry_mutex_);
      do {
        id = detail::random_token();
        dir = data_dir_ / "sessions" / id;
      } while (sessions_.count(id) || fs::exists(dir));
      fs::create_directories(dir);
    }
    auto s = std::make_shared<Session>(id, name, ds, mode, seed, utc_timestamp(), dir);
    detail::write_file_durable(dir / "session.json", s->meta().dump(2));
    s->open_log();
    {
      std::lock_guard lock(registry_mutex_);
      sessions_[id] = s;
    }
    return s->summary();
  }

  [[nodiscard]] std::shared_ptr<Session> get(const std::string& id) {
    std::lock_guard lock(registry_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError(404, "unknown session '" + id + "'");
    return it->second;
  }

  [[nodiscard]] std::vector<std::string> dataset_names() const {
    std::vector<std::string> out;
    if (!fs::is_directory(datasets_root_)) return out;
    for (const auto& e : fs::directory_iterator(datasets_root_))
      if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
  }

private:
  /// Loads and validates a dataset once; a failing dataset stays rejected.
  std::shared_ptr<const Dataset> dataset(const std::string& name) {
    std::lock_guard lock(dataset_mutex_);
    if (const auto it = datasets_.find(name); it != datasets_.end()) {
      if (!it->second.first) throw ApiError(409, "dataset failed validation", it->second.second);
      return it->second.first;
    }
    const fs::path dir = datasets_root_ / name;
    if (!detail::safe_name(name) || !fs::exists(dir / "manifest.json")) throw ApiError(404, "unknown dataset '" + name + "'");
    const ValidationReport rep = validate_dataset(dir);
    if (!rep.ok()) {
      nlohmann::json summary = rep;
      auto& v = summary["violations"];
      if (v.size() > 20) v = nlohmann::json(std::vector<nlohmann::json>(v.begin(), v.begin() + 20));
      datasets_[name] = {nullptr, summary};
      throw ApiError(409, "dataset failed validation", summary);
    }
    auto ds = std::make_shared<const Dataset>(load_dataset(dir));
    datasets_[name] = {ds, {}};
    return ds;
  }

  void restore(const fs::path& dir) {
    const auto meta = nlohmann::json::parse(read_file((dir / "session.json").string()));
    const std::string id = meta.at("session_id").get<std::string>();
    auto s = std::make_shared<Session>(id, meta.at("dataset").get<std::string>(), dataset(meta.at("dataset").get<std::string>()),
                                       parse_eval_mode(meta.at("mode").get<std::string>()), meta.at("seed").get<std::uint64_t>(),
                                       meta.at("created").get<std::string>(), dir);
    const fs::path log_path = dir / "log.jsonl";
    if (fs::exists(log_path)) {
      const std::string bytes = read_file(log_path.string());
      std::size_t good = 0;  // bytes of complete, parseable lines
      std::size_t pos = 0;
      while (pos < bytes.size()) {
        const std::size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) break;  // torn tail from an unacknowledged write
        nlohmann::json entry;
        try {
          entry = nlohmann::json::parse(bytes.substr(pos, nl - pos));
        } catch (const nlohmann::json::exception&) {
          break;
        }
        s->replay(entry);
        pos = good = nl + 1;
      }
      if (good != bytes.size()) fs::resize_file(log_path, good);
    }
    s->open_log();
    std::lock_guard lock(registry_mutex_);
    sessions_[id] = s;
  }

  fs::path datasets_root_;
  fs::path data_dir_;
  std::mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex dataset_mutex_;
  std::map<std::string, std::pair<std::shared_ptr<const Dataset>, nlohmann::json>> datasets_;
};

/// HTTP front end over a SessionManager.
class EnvServer {
public:
  explicit EnvServer(ServerConfig cfg) : cfg_(std::move(cfg)), manager_(cfg_.datasets_root, resolve_data_dir(cfg_.data_dir)) {
    server_.new_task_queue = [n = cfg_.threads] { return new httplib::ThreadPool(static_cast<std::size_t>(std::max(1, n))); };
    routes();
  }

  SessionManager& manager() noexcept { return manager_; }

  /// Binds the socket; returns the bound port.
  int bind() {
    if (cfg_.port == 0) {
      port_ = server_.bind_to_any_port(cfg_.host);
    } else if (server_.bind_to_port(cfg_.host, cfg_.port)) {
      port_ = cfg_.port;
    } else {
      port_ = -1;
    }
    if (port_ < 0) throw IoError("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    return port_;
  }

  /// Blocks serving requests until stop().
  bool serve() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  [[nodiscard]] int port() const noexcept { return port_; }

private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  template <typename Fn>
  static auto guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const ApiError& e) {
        if (e.status == 204) {
          res.status = 204;
          return;
        }
        nlohmann::json j = {{"error", e.what()}};
        if (!e.extra.empty()) j["detail"] = e.extra;
        send_json(res, e.status, j);
      } catch (const nlohmann::json::exception& e) {
        send_json(res, 400, {{"error", std::string("bad request: ") + e.what()}});
      } catch (const std::exception& e) {
        send_json(res, 500, {{"error", e.what()}});
      }
    };
  }

  static nlohmann::json body_of(const httplib::Request& req) {
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      throw ApiError(400, "body is not valid JSON");
    }
  }

  void routes() {
    server_.Get("/v1/datasets", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"datasets", manager_.dataset_names()}});
    }));
    server_.Post("/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 201, manager_.create(body_of(req)));
    }));
    server_.Get("/v1/sessions/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = manager_.get(req.path_params.at("id"));
      std::lock_guard lock(s->mutex);
      send_json(res, 200, s->summary());
    }));
    server_.Get("/v1/sessions/:id/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = manager_.get(req.path_params.at("id"));
      std::lock_guard lock(s->mutex);
      send_json(res, 200, s->next());
    }));
    server_.Post("/v1/sessions/:id/act", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = manager_.get(req.path_params.at("id"));
      const auto body = body_of(req);
      if (!body.is_object() || !body.contains("sample_id") || !body["sample_id"].is_string() || !body.contains("text") ||
          !body["text"].is_string())
        throw ApiError(400, "body must contain string 'sample_id' and 'text'");
      std::lock_guard lock(s->mutex);
      send_json(res, 200, s->act(body["sample_id"].get<std::string>(), body["text"].get<std::string>()));
    }));
    server_.Get("/v1/sessions/:id/report", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = manager_.get(req.path_params.at("id"));
      std::lock_guard lock(s->mutex);
      send_json(res, 200, s->report());
    }));
    server_.Get("/v1/sessions/:id/actions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = manager_.get(req.path_params.at("id"));
      std::lock_guard lock(s->mutex);
      res.status = 200;
      res.set_content(s->export_actions(), "application/x-ndjson");
    }));
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.status == 404 && res.body.empty()) send_json(res, 404, {{"error", "not found"}});
    });
  }

  ServerConfig cfg_;
  SessionManager manager_;
  httplib::Server server_;
  int port_ = -1;
};

}  // namespace avs

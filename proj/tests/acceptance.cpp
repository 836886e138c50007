// End-to-end acceptance checks. One PASS/FAIL line per criterion; exit status
// is nonzero when any criterion fails.

#include <avs/eval.hpp>
#include <avs/train.hpp>

#include <httplib.h>

#include "support.hpp"

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fcntl.h>
#include <iostream>
#include <numeric>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

using namespace avs;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

template <typename Fn>
void criterion(const std::string& name, Fn fn) {
  try {
    std::string detail;
    const bool ok = fn(detail);
    report(name, ok, detail);
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// child processes

struct Child {
  pid_t pid = -1;
  int out_fd = -1;
};

Child spawn(const std::vector<std::string>& args, bool pipe_stdout) {
  int fds[2] = {-1, -1};
  if (pipe_stdout && ::pipe(fds) != 0) throw std::runtime_error("pipe failed");
  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    if (pipe_stdout) {
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
    } else {
      const int devnull = ::open("/dev/null", O_WRONLY);
      ::dup2(devnull, STDOUT_FILENO);
    }
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execv(argv[0], argv.data());
    ::_exit(127);
  }
  Child c;
  c.pid = pid;
  if (pipe_stdout) {
    ::close(fds[1]);
    c.out_fd = fds[0];
  }
  return c;
}

int wait_exit(pid_t pid) {
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_line(int fd) {
  std::string line;
  char ch;
  while (::read(fd, &ch, 1) == 1 && ch != '\n') line += ch;
  return line;
}

/// Runs the CLI to completion; returns the exit code and captured stdout.
std::pair<int, std::string> run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), AVS_CLI);
  const Child c = spawn(args, true);
  std::string out;
  char buf[4096];
  ssize_t n;
  while ((n = ::read(c.out_fd, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  ::close(c.out_fd);
  return {wait_exit(c.pid), out};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path().string());
  return out;
}

CurationConfig split_config(std::uint64_t seed, int scenes, int samples) {
  CurationConfig c = testkit::small_config(seed, scenes);
  c.max_samples = samples;
  return c;
}

// server process

class ServerProcess {
public:
  ServerProcess(const fs::path& datasets, const fs::path& data) {
    child_ = spawn({AVS_CLI, "serve", "--datasets", datasets.string(), "--data", data.string(), "--port", "0"}, true);
    for (int i = 0; i < 4 && port_ == 0; ++i) {
      const std::string line = read_line(child_.out_fd);
      if (line.rfind("listening on ", 0) == 0) port_ = std::stoi(line.substr(line.rfind(':') + 1));
      if (line.empty()) break;
    }
    if (port_ == 0) throw std::runtime_error("server did not report a port");
  }
  ~ServerProcess() {
    if (child_.pid > 0) kill(SIGTERM);
  }
  void kill(int sig) {
    ::kill(child_.pid, sig);
    (void)wait_exit(child_.pid);
    ::close(child_.out_fd);
    child_.pid = -1;
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(120, 0);
    return c;
  }

private:
  Child child_;
  int port_ = 0;
};

nlohmann::json call(httplib::Result res, int expect) {
  if (!res) throw std::runtime_error("request failed: " + httplib::to_string(res.error()));
  if (res->status != expect) throw std::runtime_error(fmt("status %d: %s", res->status, res->body.c_str()));
  return res->body.empty() ? nlohmann::json() : nlohmann::json::parse(res->body);
}

double linear_slope(const std::vector<double>& ys) {
  const double n = static_cast<double>(ys.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double x = static_cast<double>(i);
    sx += x;
    sy += ys[i];
    sxx += x * x;
    sxy += x * ys[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

int main() {
  testkit::TempDir work("avs-accept");
  const fs::path datasets = work.path() / "datasets";
  fs::create_directories(datasets);

  criterion("geometry_round_trip", [](std::string& d) {
    Rng rng(101);
    const auto t0 = Clock::now();
    double worst_pos = 0, worst_ang = 0;
    for (int i = 0; i < 10000; ++i) {
      const AgentState s{rng.uniform(-1000, 1000), rng.uniform(-1000, 1000), normalize_angle(rng.uniform(-180, 180))};
      const AgentState t{rng.uniform(-1000, 1000), rng.uniform(-1000, 1000), normalize_angle(rng.uniform(-180, 180))};
      const AgentState r = transition(s, inverse_action(s, t));
      worst_pos = std::max({worst_pos, std::abs(r.x - t.x), std::abs(r.y - t.y)});
      worst_ang = std::max(worst_ang, std::abs(angle_difference(r.azimuth, t.azimuth)));
    }
    const double secs = seconds_since(t0);
    d = fmt("10000 pairs, max |dpos| %.2e cm, max |dang| %.2e deg, %.3f s", worst_pos, worst_ang, secs);
    return worst_pos <= 1e-6 && worst_ang <= 1e-6 && secs < 1.0;
  });

  criterion("prompt_identity", [](std::string& d) {
    Rng rng(102);
    double worst = 0;
    bool azimuth_exact = true;
    for (int i = 0; i < 1000; ++i) {
      const AgentState s{rng.uniform(-1000, 1000), rng.uniform(-1000, 1000), normalize_angle(rng.uniform(-180, 180))};
      const double dist = rng.uniform(0, 300);
      const AgentState r = transition(s, {-90, dist, 90});
      const double phi = s.azimuth * kDegToRad;
      // left of the facing direction (sin phi, cos phi)
      worst = std::max({worst, std::abs(r.x - (s.x - dist * std::cos(phi))), std::abs(r.y - (s.y + dist * std::sin(phi)))});
      azimuth_exact = azimuth_exact && r.azimuth == s.azimuth;
    }
    d = fmt("1000 poses, azimuth preserved exactly: %s, max position error %.2e cm", azimuth_exact ? "yes" : "no", worst);
    return azimuth_exact && worst <= 1e-9;
  });

  criterion("renderer_oracle", [](std::string& d) {
    const ClassCatalog catalog = ClassCatalog::load(default_catalog_path());
    CameraConfig cam;
    cam.width = cam.height = 64;
    Rng rng(103);
    const auto t0 = Clock::now();
    long diff = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Scene s = generate_scene(derive_seed(103, seed), {}, catalog);
      const AgentState p = testkit::random_free_pose(s, rng);
      const InstanceImage a = render_instance(s, p, cam);
      const InstanceImage b = testkit::naive_render(s, p, cam);
      for (std::size_t i = 0; i < a.ids.size(); ++i) diff += a.ids[i] != b.ids[i];
    }
    const double secs = seconds_since(t0);
    d = fmt("20 scenes at 64x64, %ld differing pixels, %.2f s", diff, secs);
    return diff == 0 && secs < 30.0;
  });

  // 200-sample set, curated twice through the CLI
  const fs::path set_a = work.path() / "set200_a", set_b = work.path() / "set200_b";
  criterion("curation_validity", [&](std::string& d) {
    const auto t0 = Clock::now();
    const std::vector<std::string> gen{"gen",      "--seed",   "5",   "--scenes", "300",      "--per-scene", "3",
                                       "--samples", "200",     "--res", "128",    "--qtypes", "existence,counting,state"};
    auto with_out = [&](const fs::path& p) {
      auto a = gen;
      a.insert(a.end(), {"--out", p.string()});
      return a;
    };
    const int gen_a = run_cli(with_out(set_a)).first;
    const int gen_b = run_cli(with_out(set_b)).first;
    const auto [val_code, val_out] = run_cli({"validate", set_a.string(), "--json"});
    const auto rep = nlohmann::json::parse(val_out);
    const std::size_t checked = rep.at("samples_checked"), violations = rep.at("violations").size();
    const bool identical = gen_a == 0 && gen_b == 0 && tree_bytes(set_a) == tree_bytes(set_b);
    const double secs = seconds_since(t0);
    d = fmt("%zu samples checked, %zu violations, re-curation byte-identical: %s, %.1f s", checked, violations,
            identical ? "yes" : "no", secs);
    return val_code == 0 && checked == 200 && violations == 0 && identical && secs < 300.0;
  });

  // 500/100 split shared by the remaining criteria
  const auto t_split = Clock::now();
  const fs::path train_dir = work.path() / "train", held_dir = datasets / "heldout";
  std::optional<Dataset> train, held;
  try {
    (void)curate_dataset(split_config(1, 400, 500), train_dir);
    (void)curate_dataset(split_config(2, 120, 100), held_dir);
    train = load_dataset(train_dir);
    held = load_dataset(held_dir);
  } catch (const std::exception& e) {
    std::cout << "split curation failed: " << e.what() << std::endl;
  }
  const double split_secs = seconds_since(t_split);

  criterion("baseline_separation", [&](std::string& d) {
    std::string parts;
    bool ok = true;
    for (const fs::path& p : {set_a, train_dir, held_dir}) {
      const Dataset ds = load_dataset(p);
      const auto [qry, tgt] = baseline_rows(ds, ds.verifier);
      parts += fmt("%s n=%zu query %.3f target %.3f; ", p.filename().c_str(), qry.count, qry.success_rate, tgt.success_rate);
      ok = ok && qry.count == ds.records.size() && qry.success_rate == 0.0 && tgt.success_rate == 1.0;
    }
    d = parts;
    return ok;
  });

  criterion("reward_arithmetic", [&](std::string& d) {
    std::size_t n = 0, bad = 0;
    for (const fs::path& p : {set_a, train_dir, held_dir}) {
      const Dataset ds = load_dataset(p);
      const RolloutConfig rc = ds.rollout_config();
      for (const auto& r : ds.records) {
        ++n;
        const double truth = verifiable_reward(ds.scene_for(r), r, format_action(r.a_tgt), rc).total;
        const double zero = verifiable_reward(ds.scene_for(r), r, "<H>0</H><D>0</D><V>0</V>", rc).total;
        bad += std::abs(truth - 1.3) > 1e-12 || std::abs(zero - 0.3) > 1e-12;
      }
    }
    d = fmt("%zu samples, %zu with total(a_tgt) != 1.3 or total(zero) != 0.3", n, bad);
    return n > 0 && bad == 0;
  });

  criterion("grpo_mathematics", [](std::string& d) {
    const std::vector<double> r{1, 0, 1, 0};
    const auto adv = grpo_advantages(r);
    bool ok = adv.size() == 4;
    for (std::size_t i = 0; ok && i < 4; ++i) ok = std::abs(adv[i] - (i % 2 ? -1.0 : 1.0)) < 1e-12;
    const std::vector<double> same(6, 0.7);
    for (const double a : grpo_advantages(same)) ok = ok && a == 0.0;
    Rng rng(104);
    double worst_sum = 0;
    for (int g = 0; g < 1000; ++g) {
      std::vector<double> xs(static_cast<std::size_t>(rng.uniform_int(2, 32)));
      for (auto& x : xs) x = rng.bernoulli(0.3) ? 1.3 : rng.uniform(0, 1.3);
      const auto a = grpo_advantages(xs);
      worst_sum = std::max(worst_sum, std::abs(std::accumulate(a.begin(), a.end(), 0.0)));
    }

    auto feats = [&] {
      ObservationFeatures f;
      f.support_visible_fraction = rng.uniform(0.0, 0.5);
      f.support_centroid_dx = rng.uniform(-1, 1);
      f.support_centroid_dy = rng.uniform(-1, 1);
      f.support_present = 1.0;
      return f;
    };
    auto random_policy = [&] {
      GaussianPolicy p;
      for (auto& x : p.params()) x = rng.uniform(-0.8, 0.8);
      p.clamp_log_std();
      return p;
    };
    double worst_rel = 0;
    auto check = [&](GaussianPolicy p, const Gradient& g, auto f) {
      const double h = 1e-5;
      for (std::size_t i = 0; i < GaussianPolicy::kParamCount; ++i) {
        const double x = p.params()[i];
        p.params()[i] = x + h;
        const double up = f(p);
        p.params()[i] = x - h;
        const double down = f(p);
        p.params()[i] = x;
        const double num = (up - down) / (2 * h);
        const double scale = std::max({std::abs(g[i]), std::abs(num), 1e-5});
        worst_rel = std::max(worst_rel, std::abs(g[i] - num) / scale);
      }
    };
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<LabeledExample> data;
      for (int i = 0; i < 20; ++i) data.push_back({feats(), {rng.uniform(-90, 90), rng.uniform(10, 200), rng.uniform(-90, 90)}});
      const GaussianPolicy p = random_policy();
      Gradient g{};
      (void)sft_loss(p, data, &g);
      check(p, g, [&](const GaussianPolicy& q) { return sft_loss(q, data); });
    }
    for (int trial = 0; trial < 20; ++trial) {
      const GaussianPolicy old = random_policy(), ref = random_policy();
      GaussianPolicy cur = old;
      for (auto& x : cur.params()) x += rng.uniform(-0.05, 0.05);
      std::vector<ObservationFeatures> ctx;
      for (int c = 0; c < 4; ++c) ctx.push_back(feats());
      std::vector<RolloutSample> samples;
      for (std::size_t c = 0; c < ctx.size(); ++c) {
        std::vector<double> rewards;
        for (int i = 0; i < 8; ++i) {
          RolloutSample s;
          s.context = c;
          s.z = old.sample_raw(ctx[c], rng);
          s.old_log_prob = old.log_prob(ctx[c], s.z);
          samples.push_back(s);
          rewards.push_back(rng.bernoulli(0.5) ? 1.3 : 0.3);
        }
        const auto a = grpo_advantages(rewards);
        for (int i = 0; i < 8; ++i) samples[samples.size() - 8 + static_cast<std::size_t>(i)].advantage = a[static_cast<std::size_t>(i)];
      }
      Gradient g{};
      (void)grpo_objective(cur, ref, ctx, samples, 0.2, 0.04, &g);
      check(cur, g, [&](const GaussianPolicy& q) { return grpo_objective(q, ref, ctx, samples, 0.2, 0.04).objective; });
    }
    d = fmt("[1,0,1,0] -> [%g,%g,%g,%g], max |group sum| %.1e, max gradient rel. error %.1e", adv[0], adv[1], adv[2], adv[3],
            worst_sum, worst_rel);
    return ok && worst_sum <= 1e-9 && worst_rel <= 1e-4;
  });

  std::optional<GaussianPolicy> sft_rl_policy;
  criterion("two_stage_ordering", [&](std::string& d) {
    if (!train || !held) throw std::runtime_error("split unavailable");
    const auto t0 = Clock::now();
    const double random = evaluate_policy(*held, RandomActions{7}, {}, held->verifier).report.overall.success_rate;
    std::ostringstream os;
    os << fmt("train %zu, held-out %zu, random %.3f", train->records.size(), held->records.size(), random);
    bool ok = train->records.size() == 500 && held->records.size() == 100;
    std::vector<double> slopes;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      std::map<TrainMode, double> rate;
      for (const TrainMode m : {TrainMode::sft, TrainMode::rl, TrainMode::sft_rl}) {
        TrainConfig cfg;
        cfg.mode = m;
        cfg.seed = seed;
        const TrainResult res = train_policy(*train, cfg);
        rate[m] = evaluate_policy(*held, res.policy, {}, held->verifier).report.overall.success_rate;
        if (m == TrainMode::sft_rl && seed == 1) sft_rl_policy = res.policy;
        if (m == TrainMode::rl) {
          std::vector<double> ys;
          for (const auto& p : res.curve) ys.push_back(p.mean_reward);
          slopes.push_back(linear_slope(ys));
        }
      }
      os << fmt("; seed %d sft %.3f rl %.3f sft-rl %.3f", static_cast<int>(seed), rate[TrainMode::sft], rate[TrainMode::rl],
                rate[TrainMode::sft_rl]);
      ok = ok && rate[TrainMode::sft_rl] >= rate[TrainMode::sft] && rate[TrainMode::sft_rl] >= rate[TrainMode::rl];
      for (const auto& [m, v] : rate) ok = ok && v - random >= 0.20;
    }
    const double secs = seconds_since(t0) + split_secs;
    os << fmt("; rl reward-curve slopes %.4f %.4f %.4f", slopes[0], slopes[1], slopes[2]);
    os << fmt("; %.1f s including curation", secs);
    d = os.str();
    return ok && secs < 900.0;
  });

  criterion("multi_turn_consistency", [&](std::string& d) {
    if (!held || !sft_rl_policy) throw std::runtime_error("held-out split or trained policy unavailable");
    const auto single = evaluate_policy(*held, *sft_rl_policy, parse_eval_mode("single"), held->verifier);
    const auto one = evaluate_policy(*held, *sft_rl_policy, parse_eval_mode("multi:1"), held->verifier);
    const auto two = evaluate_policy(*held, *sft_rl_policy, parse_eval_mode("multi:2"), held->verifier);
    nlohmann::json js = single.report, j1 = one.report;
    js.erase("mode");
    j1.erase("mode");
    bool same = js.dump() == j1.dump() && single.outcomes.size() == one.outcomes.size();
    for (std::size_t i = 0; same && i < single.outcomes.size(); ++i)
      same = nlohmann::json(single.outcomes[i]).dump() == nlohmann::json(one.outcomes[i]).dump();
    d = fmt("multi:1 identical to single: %s; multi:2 completed %zu/%zu samples, success %.3f, mean turns %.2f",
            same ? "yes" : "no", two.report.overall.count, held->records.size(), two.report.overall.success_rate,
            two.report.overall.mean_turns);
    return same && two.report.overall.count == held->records.size();
  });

  criterion("server_durability", [&](std::string& d) {
    if (!held) throw std::runtime_error("held-out split unavailable");
    const fs::path data = work.path() / "server-data";
    const std::size_t n = held->records.size(), half = n / 2;
    Rng rng(105);
    auto text_for = [&](const SampleRecord& r, int turn) {
      const int k = rng.uniform_int(0, 3);
      if (k == 0) return format_action(r.a_tgt);
      if (k == 1) return std::string("no action");
      return turn == 0 ? random_action_text(rng, 200) : format_action(r.a_tgt);
    };
    auto play = [&](httplib::Client& c, const std::string& base, std::size_t from, std::size_t to) {
      for (std::size_t i = from; i < to; ++i) {
        const auto next = call(c.Get(base + "/next"), 200);
        const std::string sid = next.at("sample_id");
        const auto& r = held->records[*held->index_of(sid)];
        for (int turn = 0;; ++turn) {
          const auto res = call(c.Post(base + "/act", nlohmann::json{{"sample_id", sid}, {"text", text_for(r, turn)}}.dump(),
                                       "application/json"),
                                200);
          if (res.at("sample_done").get<bool>()) break;
        }
      }
    };

    std::string id, base, acked_report, acked_export;
    std::size_t acked_cursor = 0;
    {
      ServerProcess srv(datasets, data);
      auto c = srv.client();
      id = call(c.Post("/v1/sessions", nlohmann::json{{"dataset", "heldout"}, {"mode", "multi:2"}}.dump(), "application/json"),
                201)
               .at("session_id");
      base = "/v1/sessions/" + id;
      play(c, base, 0, half);
      acked_cursor = call(c.Get(base), 200).at("cursor");
      acked_report = call(c.Get(base + "/report"), 200).dump();
      acked_export = c.Get(base + "/actions")->body;
      srv.kill(SIGKILL);
    }
    ServerProcess srv(datasets, data);
    auto c = srv.client();
    const std::size_t cursor = call(c.Get(base), 200).at("cursor");
    const bool restored = cursor == half && acked_cursor == half && call(c.Get(base + "/report"), 200).dump() == acked_report &&
                          c.Get(base + "/actions")->body == acked_export;
    play(c, base, half, n);
    const bool finished = c.Get(base + "/next")->status == 204;
    const auto server_report = call(c.Get(base + "/report"), 200);
    const fs::path actions = work.path() / "actions.jsonl", offline = work.path() / "offline.json";
    write_file(actions.string(), c.Get(base + "/actions")->body);
    const int code = run_cli({"eval", "--dataset", held_dir.string(), "--actions", actions.string(), "--mode", "multi:2", "--out",
                              offline.string()})
                         .first;
    const auto offline_report = nlohmann::json::parse(read_file(offline.string()));
    const bool equal = code == 0 && server_report == offline_report;
    d = fmt("SIGKILL after %zu/%zu samples; restored state identical: %s; session finished: %s; "
            "server report equals offline eval of exported log: %s (success %.3f)",
            half, n, restored ? "yes" : "no", finished ? "yes" : "no", equal ? "yes" : "no",
            server_report.at("overall").at("success_rate").get<double>());
    return restored && finished && equal;
  });

  std::cout << (failures == 0 ? "all criteria passed" : fmt("%d criterion(s) failed", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}

// SPDX-License-Identifier: Apache-2.0
#include "dnls/apps/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <new>
#include <sstream>
#include <tuple>

#include "json.hpp"

#include "dnls/apps/pose_graph.hpp"
#include "dnls/error.hpp"
#include "dnls/layer/layer.hpp"
#include "dnls/tensor/memory.hpp"

namespace dnls::apps {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Suite parsing

namespace {

const char* const kListFields[] = {"solver", "backward_mode", "num_poses", "batch_size", "iterations",
                                   "method", "loop_closure_prob", "seed", "vectorize"};

void apply_field(BenchConfig& c, const std::string& key, const json& v) {
  if (key == "solver") c.solver = v.get<std::string>();
  else if (key == "backward_mode") c.backward_mode = v.get<std::string>();
  else if (key == "num_poses") c.num_poses = v.get<std::int64_t>();
  else if (key == "batch_size") c.batch_size = v.get<std::int64_t>();
  else if (key == "iterations") c.iterations = v.get<int>();
  else if (key == "method") c.method = v.get<std::string>();
  else if (key == "loop_closure_prob") c.loop_closure_prob = v.get<double>();
  else if (key == "seed") c.seed = v.get<std::uint64_t>();
  else if (key == "vectorize") c.vectorize = v.get<bool>();
  else throw Error("suite: unknown field '" + key + "'");
}

void check_config(const BenchConfig& c) {
  if (c.experiment.empty() || c.experiment.find_first_of(",\n\"") != std::string::npos) {
    throw Error("suite: experiment names must be non-empty and free of commas and quotes");
  }
  if (c.solver != "sparse" && c.solver != "dense") throw Error("suite: solver must be sparse or dense");
  if (c.backward_mode != "none") backward::parse_mode(c.backward_mode);
  if (!optim::parse_method(c.method)) throw Error("suite: unknown method '" + c.method + "'");
  if (c.num_poses < 2 || c.batch_size < 1 || c.iterations < 0) throw Error("suite: invalid sizes");
}

}  // namespace

BenchSuite parse_suite(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("suite: ") + e.what());
  }
  BenchSuite suite;
  try {
    suite.repeats = j.value("repeats", 3);
    suite.memory_limit_bytes = j.value("memory_limit_bytes", std::size_t{0});
    BenchConfig base;
    if (j.contains("defaults")) {
      for (const auto& [k, v] : j.at("defaults").items()) apply_field(base, k, v);
    }
    for (const auto& ex : j.at("experiments")) {
      BenchConfig proto = base;
      proto.experiment = ex.at("name").get<std::string>();
      std::vector<std::pair<std::string, std::vector<json>>> lists;
      for (const auto& [k, v] : ex.items()) {
        if (k == "name") continue;
        if (std::find(std::begin(kListFields), std::end(kListFields), k) == std::end(kListFields)) {
          throw Error("suite: unknown field '" + k + "'");
        }
        if (v.is_array()) {
          if (v.empty()) throw Error("suite: empty list for '" + k + "'");
          lists.emplace_back(k, std::vector<json>(v.begin(), v.end()));
        } else {
          apply_field(proto, k, v);
        }
      }
      std::vector<std::size_t> idx(lists.size(), 0);
      auto advance = [&]() {
        for (std::size_t f = lists.size(); f-- > 0;) {
          if (++idx[f] < lists[f].second.size()) return true;
          idx[f] = 0;
        }
        return false;
      };
      do {
        BenchConfig c = proto;
        for (std::size_t f = 0; f < lists.size(); ++f) apply_field(c, lists[f].first, lists[f].second[idx[f]]);
        check_config(c);
        suite.configs.push_back(c);
      } while (advance());
    }
  } catch (const json::exception& e) {
    throw Error(std::string("suite: ") + e.what());
  }
  if (suite.repeats < 1) throw Error("suite: repeats must be at least 1");
  return suite;
}

BenchSuite load_suite(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open suite '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_suite(ss.str());
}

// ---------------------------------------------------------------------------
// Running

namespace {

class LimitGuard {
 public:
  explicit LimitGuard(std::size_t bytes) : prev_(memory::limit()) { memory::set_limit(bytes); }
  ~LimitGuard() { memory::set_limit(prev_); }
  LimitGuard(const LimitGuard&) = delete;
  LimitGuard& operator=(const LimitGuard&) = delete;

 private:
  std::size_t prev_;
};

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

BenchRow run_config(const BenchConfig& cfg, std::size_t memory_limit) {
  check_config(cfg);
  BenchRow row;
  row.config = cfg;
  CubeConfig cube;
  cube.num_poses = cfg.num_poses;
  cube.batch = cfg.batch_size;
  cube.loop_closure_prob = cfg.loop_closure_prob;
  cube.seed = cfg.seed;
  const PoseGraph g = generate_cube(cube);

  layer::LayerConfig lc;
  lc.optimizer.method = *optim::parse_method(cfg.method);
  lc.optimizer.max_iterations = cfg.iterations;
  lc.optimizer.abs_tol = 0;
  lc.optimizer.rel_tol = 0;
  lc.optimizer.linear.kind = cfg.solver == "dense" ? sparse::SolverKind::Dense : sparse::SolverKind::Sparse;
  const bool run_backward = cfg.backward_mode != "none";
  lc.mode = run_backward ? backward::parse_mode(cfg.backward_mode) : backward::BackwardMode::implicit();
  lc.required_inputs = std::vector<std::string>{};
  PgoOptions po;
  po.vectorize = cfg.vectorize;

  try {
    LimitGuard guard(memory_limit);
    layer::DnlsLayer layer(build_pgo(g, po), lc);
    memory::PeakScope peak;
    const auto t0 = std::chrono::steady_clock::now();
    const layer::ForwardResult fr = layer.forward({});
    row.forward_ms = ms_since(t0);
    if (run_backward) {
      std::vector<BatchedArray> poses;
      for (std::size_t k = 0; k < g.poses.size(); ++k) poses.push_back(fr.solution.at(pose_name(k)));
      const std::vector<BatchedArray> up = pose_error_grad(g.kind, poses, g.ground_truth);
      std::map<std::string, BatchedArray> upstream;
      for (std::size_t k = 0; k < up.size(); ++k) upstream[pose_name(k)] = up[k];
      const auto t1 = std::chrono::steady_clock::now();
      layer.backward(upstream);
      row.backward_ms = ms_since(t1);
    }
    row.peak_bytes = peak.peak_above_base();
    double s = 0;
    for (std::int64_t b = 0; b < fr.info.final_objective.batch(); ++b) s += fr.info.final_objective[b];
    row.final_objective = s / static_cast<double>(fr.info.final_objective.batch());
  } catch (const std::bad_alloc&) {
    row.ok = false;
    row.forward_ms = row.backward_ms = 0;
    row.peak_bytes = 0;
    row.final_objective = 0;
  }
  return row;
}

std::vector<BenchRow> run_suite(const BenchSuite& suite, const BenchProgress& progress) {
  std::vector<BenchRow> rows;
  for (const BenchConfig& c : suite.configs) {
    for (int r = 0; r < suite.repeats; ++r) {
      BenchRow row = run_config(c, suite.memory_limit_bytes);
      if (progress) progress(row, r);
      const bool oom = !row.ok;
      rows.push_back(std::move(row));
      if (oom) {
        // Repeating an out-of-memory configuration only repeats the failure.
        for (int rest = r + 1; rest < suite.repeats; ++rest) rows.push_back(rows.back());
        break;
      }
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

void write_csv(const std::vector<BenchRow>& rows, std::ostream& out) {
  out << kBenchHeader << '\n';
  for (const BenchRow& r : rows) {
    const BenchConfig& c = r.config;
    out << c.experiment << ',' << c.solver << ',' << c.backward_mode << ',' << c.num_poses << ',' << c.batch_size
        << ',' << c.iterations << ',';
    if (r.ok) {
      out << std::fixed << std::setprecision(3) << r.forward_ms << ',' << r.backward_ms << ',' << r.peak_bytes << ','
          << std::defaultfloat << std::setprecision(17) << r.final_objective;
    } else {
      out << ",,,oom";
    }
    out << std::defaultfloat << std::setprecision(6) << '\n';
  }
}

namespace {

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!s.empty() && s.back() == ',') out.emplace_back();
  return out;
}

template <class V>
V field(const std::string& s, int line, const char* name) {
  std::istringstream in(s);
  V v{};
  if (!(in >> v) || !(in >> std::ws).eof()) throw ParseError(std::string("bad ") + name + " '" + s + "'", line);
  return v;
}

}  // namespace

std::vector<BenchRow> read_csv(std::istream& in) {
  std::string text;
  int line = 1;
  if (!std::getline(in, text)) throw ParseError("empty CSV", line);
  if (!text.empty() && text.back() == '\r') text.pop_back();
  if (text != kBenchHeader) throw ParseError("unexpected header '" + text + "'", line);
  std::vector<BenchRow> rows;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    const auto f = split(text);
    if (f.size() != 10) throw ParseError("expected 10 fields, got " + std::to_string(f.size()), line);
    BenchRow r;
    r.config.experiment = f[0];
    r.config.solver = f[1];
    r.config.backward_mode = f[2];
    r.config.num_poses = field<std::int64_t>(f[3], line, "num_poses");
    r.config.batch_size = field<std::int64_t>(f[4], line, "batch_size");
    r.config.iterations = field<int>(f[5], line, "iterations");
    if (f[9] == "oom") {
      r.ok = false;
    } else {
      r.forward_ms = field<double>(f[6], line, "forward_ms");
      r.backward_ms = field<double>(f[7], line, "backward_ms");
      r.peak_bytes = field<std::size_t>(f[8], line, "peak_bytes");
      r.final_objective = field<double>(f[9], line, "final_objective");
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<BenchRow> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path + "'");
  return read_csv(f);
}

// ---------------------------------------------------------------------------
// Trends

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

using Key = std::tuple<std::string, std::string, std::string, std::int64_t, std::int64_t, int>;

Key key_of(const BenchConfig& c) {
  return {c.experiment, c.solver, c.backward_mode, c.num_poses, c.batch_size, c.iterations};
}

std::string mode_family(const std::string& m) { return m.substr(0, m.find(':')); }

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

std::string where(const BenchConfig& c) {
  return c.experiment + "/" + c.solver + "/" + c.backward_mode + "/N=" + std::to_string(c.num_poses) +
         "/B=" + std::to_string(c.batch_size);
}

}  // namespace

std::vector<BenchSummary> summarize(const std::vector<BenchRow>& rows) {
  std::map<Key, std::vector<const BenchRow*>> groups;
  std::vector<Key> order;
  for (const auto& r : rows) {
    const Key k = key_of(r.config);
    if (!groups.count(k)) order.push_back(k);
    groups[k].push_back(&r);
  }
  std::vector<BenchSummary> out;
  for (const Key& k : order) {
    const auto& g = groups[k];
    BenchSummary s;
    s.config = g.front()->config;
    s.repeats = static_cast<int>(g.size());
    s.ok = std::all_of(g.begin(), g.end(), [](const BenchRow* r) { return r->ok; });
    if (s.ok) {
      std::vector<double> f, b, p, o;
      for (const BenchRow* r : g) {
        f.push_back(r->forward_ms);
        b.push_back(r->backward_ms);
        p.push_back(static_cast<double>(r->peak_bytes));
        o.push_back(r->final_objective);
      }
      s.forward_ms = median(f);
      s.backward_ms = median(b);
      s.peak_bytes = median(p);
      s.final_objective = median(o);
    }
    out.push_back(s);
  }
  return out;
}

const char* trend_status_name(TrendCheck::Status s) noexcept {
  switch (s) {
    case TrendCheck::Status::Pass:
      return "PASS";
    case TrendCheck::Status::Fail:
      return "FAIL";
    case TrendCheck::Status::Skip:
      return "SKIP";
  }
  return "?";
}

std::vector<TrendCheck> check_trends(const std::vector<BenchRow>& rows) {
  const std::vector<BenchSummary> sum = summarize(rows);
  std::vector<TrendCheck> out;
  auto find = [&](const BenchConfig& c) -> const BenchSummary* {
    for (const auto& s : sum) {
      if (key_of(s.config) == key_of(c)) return &s;
    }
    return nullptr;
  };
  auto add = [&](std::string name, bool pass, std::string detail) {
    out.push_back({std::move(name), pass ? TrendCheck::Status::Pass : TrendCheck::Status::Fail, std::move(detail)});
  };

  // Sparse faster than dense at scale.
  bool any = false;
  for (const auto& s : sum) {
    if (s.config.solver != "sparse" || s.config.num_poses < 512 || !s.ok) continue;
    BenchConfig d = s.config;
    d.solver = "dense";
    const BenchSummary* dense = find(d);
    if (!dense) continue;
    any = true;
    if (!dense->ok) {
      add("sparse_faster_than_dense", true, where(s.config) + ": dense out of memory");
    } else {
      add("sparse_faster_than_dense", s.total_ms() < dense->total_ms(),
          where(s.config) + ": sparse " + fmt(s.total_ms()) + " ms, dense " + fmt(dense->total_ms()) + " ms");
    }
  }
  if (!any) out.push_back({"sparse_faster_than_dense", TrendCheck::Status::Skip, "no sparse/dense pair at >= 512 poses"});

  // Backward time and memory against inner iterations.
  std::map<std::tuple<std::string, std::string, std::string, std::int64_t, std::int64_t>, std::map<int, const BenchSummary*>>
      series;
  for (const auto& s : sum) {
    if (!s.ok) continue;
    const BenchConfig& c = s.config;
    series[{c.experiment, c.solver, c.backward_mode, c.num_poses, c.batch_size}][c.iterations] = &s;
  }
  bool time_any = false, mem_any = false;
  for (const auto& [k, by_iter] : series) {
    const std::string fam = mode_family(std::get<2>(k));
    const BenchConfig& c = by_iter.begin()->second->config;
    if (by_iter.count(10) && by_iter.count(50)) {
      const double r = by_iter.at(50)->backward_ms / std::max(by_iter.at(10)->backward_ms, 1e-9);
      if (fam == "unroll") {
        time_any = true;
        add("unroll_backward_grows", r >= 3.0, where(c) + ": backward 50/10 ratio " + fmt(r) + " (>= 3)");
      } else if (fam == "implicit" || fam == "dlm") {
        time_any = true;
        add(fam + "_backward_constant", r <= 1.5, where(c) + ": backward 50/10 ratio " + fmt(r) + " (<= 1.5)");
      }
    }
    if (by_iter.size() >= 2 && by_iter.count(10)) {
      if (fam == "unroll") {
        mem_any = true;
        bool inc = true;
        double prev = -1;
        std::string trail;
        for (const auto& [it, s] : by_iter) {
          inc = inc && s->peak_bytes > prev;
          prev = s->peak_bytes;
          trail += (trail.empty() ? "" : " ") + std::to_string(it) + ":" + fmt(s->peak_bytes);
        }
        add("unroll_memory_grows", inc, where(c) + ": peak bytes " + trail);
      } else if (fam == "implicit") {
        mem_any = true;
        const double base = by_iter.at(10)->peak_bytes;
        double worst = 0;
        for (const auto& [it, s] : by_iter) worst = std::max(worst, std::abs(s->peak_bytes - base) / base);
        add("implicit_memory_constant", worst <= 0.10, where(c) + ": max deviation " + fmt(100 * worst) + "% (<= 10%)");
      }
    }
  }
  if (!time_any) out.push_back({"backward_time_trend", TrendCheck::Status::Skip, "no 10/50 iteration pairs"});
  if (!mem_any) out.push_back({"memory_trend", TrendCheck::Status::Skip, "no iteration series with a 10-iteration run"});
  return out;
}

}  // namespace dnls::apps

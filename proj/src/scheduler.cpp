#include "miniwfl/scheduler.hpp"

#include <algorithm>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <iomanip>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "miniwfl/error.hpp"

namespace miniwfl {

namespace fs = std::filesystem;

Json Event::to_json() const {
  return Json{{"ts", rfc3339(ts)}, {"task", task}, {"transition", transition}, {"attempt", attempt}};
}

const char* to_string(RunStatus status) {
  return status == RunStatus::Success ? "Success" : "PermanentFail";
}

const char* to_string(FailureClass c) { return c == FailureClass::Temporary ? "Temporary" : "Permanent"; }

FailureClass classify_failure(const TaskAttempt&, FailureCause cause) {
  switch (cause) {
    case FailureCause::Timeout:
    case FailureCause::LaunchRace:
      return FailureClass::Temporary;
    default:
      return FailureClass::Permanent;
  }
}

std::vector<std::string> admission(const std::vector<AdmissionCandidate>& ready, const Ledger& running,
                                   const RunConfig& cfg) {
  std::vector<std::string> admitted;
  Ledger l = running;
  for (const auto& c : ready) {
    if (l.running >= cfg.parallelism) break;
    if (l.cores + c.request.cores > cfg.machine.cores || l.ram_mib + c.request.ram_mib > cfg.machine.ram_mib ||
        l.disk_mib + c.request.disk_mib > cfg.machine.disk_mib) {
      continue;
    }
    ++l.running;
    l.cores += c.request.cores;
    l.ram_mib += c.request.ram_mib;
    l.disk_mib += c.request.disk_mib;
    admitted.push_back(c.id);
  }
  return admitted;
}

std::string new_run_id() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  std::random_device rd;
  std::ostringstream s;
  s << stamp << "-" << std::hex << std::setw(6) << std::setfill('0') << (rd() & 0xffffffu);
  return s.str();
}

namespace {

struct Unit {
  TaskNode node;
  std::string parent;  // set on run-time scatter elements
  std::size_t layer = 0;
  TaskState state = TaskState::Pending;
  std::map<std::string, Json> inputs;
  ResourceRequest resources;
  std::optional<CacheKey> key;
  int attempts = 0;
};

struct ScatterGroup {
  std::vector<std::string> children;
  std::size_t remaining = 0;
  bool failed = false;
};

struct Completion {
  std::string id;
  AttemptResult result;
};

class Coordinator {
 public:
  Coordinator(DataflowGraph& graph, const RunConfig& cfg, const Services& services, RunResult& result)
      : graph_(graph), cfg_(cfg), services_(services), result_(result) {}

  void run() {
    std::map<const Document*, std::string> digests;
    for (const auto& node : graph_.nodes()) {
      TaskRecord& rec = result_.tasks[node.id];
      rec.id = node.id;
      auto [it, fresh] = digests.try_emplace(node.tool_document.get());
      if (fresh) it->second = canonical_digest(*node.tool_document);
      rec.tool_digest = it->second;
    }
    for (;;) {
      if (!stopping_) discover();
      if (!stopping_) admit();
      if (ledger_.running == 0) break;
      wait_for_completions();
    }
    for (const auto& [id, binding] : graph_.workflow_outputs()) {
      result_.outputs[id] = graph_.resolve(binding).value_or(Json());
    }
    bool ok = !failed_;
    for (const auto& node : graph_.nodes()) {
      ok = ok && (node.state == TaskState::Succeeded || node.state == TaskState::Cached ||
                  node.state == TaskState::Skipped);
    }
    result_.status = ok ? RunStatus::Success : RunStatus::PermanentFail;
  }

 private:
  // ----- bookkeeping -------------------------------------------------------

  void log(const std::string& id, const std::string& transition, int attempt) {
    Event e{Clock::now(), id, transition, attempt};
    if (services_.on_event) services_.on_event(e);
    result_.events.push_back(std::move(e));
  }

  void warn(const std::string& message) {
    if (services_.on_warning) services_.on_warning(message);
    result_.warnings.push_back(message);
  }

  void transition(const std::string& id, TaskState to) {
    Unit& u = units_.at(id);
    if (!transition_allowed(u.state, to)) {
      throw std::logic_error(std::string("illegal transition of '") + id + "' from " + to_string(u.state) +
                             " to " + to_string(to));
    }
    if (u.parent.empty()) graph_.set_state(id, to);
    log(id, std::string(to_string(u.state)) + "->" + to_string(to), u.attempts);
    u.state = to;
    result_.tasks[id].state = to;
  }

  // Routes a task that cannot run to Failed along legal transitions.
  void fail_unit(const std::string& id, const std::string& message) {
    Unit& u = units_.at(id);
    if (u.state == TaskState::Pending) transition(id, TaskState::Ready);
    if (u.state == TaskState::Ready) transition(id, TaskState::Running);
    result_.tasks[id].message = message;
    transition(id, TaskState::Failed);
    on_failure(id);
  }

  void on_failure(const std::string& id) {
    failed_ = true;
    if (cfg_.on_error == OnError::Stop) stopping_ = true;
    const std::string parent = units_.at(id).parent;
    if (!parent.empty()) {
      auto& group = groups_.at(parent);
      group.failed = true;
      --group.remaining;
      check_group(parent);
    }
  }

  void skip_unit(const std::string& id) {
    transition(id, TaskState::Skipped);
    Unit& u = units_.at(id);
    std::map<std::string, Json> nulls;
    for (const auto& o : u.node.tool().outputs) nulls[o.id] = nullptr;
    publish(id, std::move(nulls));
  }

  void publish(const std::string& id, std::map<std::string, Json> outputs) {
    Unit& u = units_.at(id);
    for (const auto& o : u.node.tool().outputs) {
      if (!outputs.contains(o.id)) outputs[o.id] = nullptr;
    }
    if (u.parent.empty()) {
      for (const auto& [out, value] : outputs) graph_.publish(id, out, value);
    }
    result_.tasks[id].outputs = std::move(outputs);
    if (!u.parent.empty()) {
      --groups_.at(u.parent).remaining;
      check_group(u.parent);
    }
  }

  void check_group(const std::string& parent) {
    ScatterGroup& group = groups_.at(parent);
    if (group.remaining != 0) return;
    if (group.failed) {
      result_.tasks[parent].message = "a scatter element failed";
      transition(parent, TaskState::Failed);
      failed_ = true;
      if (cfg_.on_error == OnError::Stop) stopping_ = true;
      return;
    }
    std::map<std::string, Json> gathered;
    for (const auto& o : units_.at(parent).node.tool().outputs) {
      Json arr = Json::array();
      for (const auto& child : group.children) arr.push_back(result_.tasks.at(child).outputs.at(o.id));
      gathered[o.id] = std::move(arr);
    }
    transition(parent, TaskState::Succeeded);
    publish(parent, std::move(gathered));
  }

  // ----- discovery ---------------------------------------------------------

  void discover() {
    bool changed = true;
    while (changed && !stopping_) {
      changed = false;
      for (const auto& id : graph_.ready_set()) {
        if (stopping_) break;
        consider(id);
        changed = true;
      }
    }
  }

  void consider(const std::string& id) {
    const TaskNode& node = graph_.node(id);
    Unit& u = units_[id];
    u.node = node;
    u.layer = graph_.layer(id);
    GuardDecision decision;
    try {
      decision = apply_guards(node, graph_);
    } catch (const Error& e) {
      fail_unit(id, e.what());
      return;
    }
    if (decision == GuardDecision::Skip) {
      skip_unit(id);
      return;
    }
    transition(id, TaskState::Ready);
    std::map<std::string, Json> inputs;
    try {
      inputs = graph_.resolve_inputs(node);
    } catch (const Error& e) {
      fail_unit(id, e.what());
      return;
    }
    if (!node.deferred_scatter.empty()) {
      expand(id);
      return;
    }
    make_ready(id, std::move(inputs));
  }

  void expand(const std::string& id) {
    const TaskNode& proto = units_.at(id).node;
    std::vector<TaskNode> children;
    try {
      std::map<std::string, Json> bound;
      for (const auto& s : proto.deferred_scatter) bound[s] = graph_.resolve(proto.scatter_bindings.at(s)).value();
      children = expand_scatter(proto, proto.deferred_scatter, bound);
    } catch (const Error& e) {
      fail_unit(id, e.what());
      return;
    }
    transition(id, TaskState::Running);
    ScatterGroup& group = groups_[id];
    group.remaining = children.size();
    for (auto& child : children) group.children.push_back(child.id);
    if (children.empty()) {
      check_group(id);
      return;
    }
    const std::size_t layer = units_.at(id).layer;
    const std::string tool_digest = result_.tasks[id].tool_digest;
    for (auto& child : children) {
      const std::string cid = child.id;
      Unit& cu = units_[cid];
      cu.node = std::move(child);
      cu.parent = id;
      cu.layer = layer;
      TaskRecord& rec = result_.tasks[cid];
      rec.id = cid;
      rec.tool_digest = tool_digest;
      start_child(cid);
      if (stopping_) break;
    }
  }

  void start_child(const std::string& id) {
    Unit& u = units_.at(id);
    std::map<std::string, Json> inputs;
    try {
      for (const auto& guard : u.node.guards) {
        if (!guard.own) continue;
        EvalContext ctx;
        for (const auto& [gid, b] : guard.inputs) ctx.inputs[gid] = graph_.resolve(b).value();
        if (apply_guard(guard, ctx) == GuardDecision::Skip) {
          skip_unit(id);
          return;
        }
      }
      for (const auto& [bid, b] : u.node.bindings) inputs[bid] = graph_.resolve(b).value();
    } catch (const std::exception& e) {
      fail_unit(id, e.what());
      return;
    }
    transition(id, TaskState::Ready);
    make_ready(id, std::move(inputs));
  }

  void make_ready(const std::string& id, std::map<std::string, Json> inputs) {
    Unit& u = units_.at(id);
    TaskRecord& rec = result_.tasks[id];
    u.inputs = std::move(inputs);
    rec.inputs = u.inputs;
    try {
      u.resources = resolve_resources(u.node, u.inputs, cfg_.machine);
    } catch (const Error& e) {
      fail_unit(id, e.what());
      return;
    }
    rec.resources = u.resources;
    const auto& m = cfg_.machine;
    if (u.resources.cores > m.cores || u.resources.ram_mib > m.ram_mib || u.resources.disk_mib > m.disk_mib) {
      fail_unit(id, "ResourceUnsatisfiable: task needs " + std::to_string(u.resources.cores) + " cores, " +
                        std::to_string(u.resources.ram_mib) + " MiB RAM, " + std::to_string(u.resources.disk_mib) +
                        " MiB disk; machine has " + std::to_string(m.cores) + ", " + std::to_string(m.ram_mib) +
                        ", " + std::to_string(m.disk_mib));
      return;
    }
    if (cfg_.enable_reuse && services_.cache) {
      u.key = cache_key(u.node, u.inputs, u.resources);
      if (u.key->reusable) rec.cache_key = u.key->str();
      try {
        if (auto entry = u.key->reusable ? services_.cache->lookup(*u.key) : std::nullopt) {
          auto outputs = services_.cache->copy_out(*entry, cfg_.work_dir / "cached" / sanitize_task_id(id));
          rec.cached = true;
          transition(id, TaskState::Cached);
          publish(id, std::move(outputs));
          return;
        }
      } catch (const Error& e) {
        warn("cache lookup for '" + id + "' failed: " + e.what());
      }
    }
    queue_.push_back(id);
  }

  // ----- execution ---------------------------------------------------------

  auto order_key(const std::string& id) const {
    const Unit& u = units_.at(id);
    const std::string& base = u.parent.empty() ? id : u.parent;
    const std::size_t index = u.node.scatter_index.value_or(0);
    return std::make_tuple(u.layer, base, index, id);
  }

  void admit() {
    std::sort(queue_.begin(), queue_.end(),
              [&](const std::string& a, const std::string& b) { return order_key(a) < order_key(b); });
    std::vector<AdmissionCandidate> candidates;
    for (const auto& id : queue_) candidates.push_back({id, units_.at(id).resources});
    for (const auto& id : admission(candidates, ledger_, cfg_)) {
      queue_.erase(std::find(queue_.begin(), queue_.end(), id));
      Unit& u = units_.at(id);
      if (u.state == TaskState::Ready) transition(id, TaskState::Running);
      ++u.attempts;
      log(id, "Attempt", u.attempts);
      ++ledger_.running;
      ledger_.cores += u.resources.cores;
      ledger_.ram_mib += u.resources.ram_mib;
      ledger_.disk_mib += u.resources.disk_mib;
      launch(id, u);
    }
  }

  void launch(const std::string& id, const Unit& u) {
    const fs::path work_root = cfg_.work_dir / "tasks";
    threads_[id] = std::thread([this, id, node = u.node, inputs = u.inputs, resources = u.resources,
                                attempt = u.attempts, work_root] {
      AttemptResult r;
      try {
        r = run_attempt(node, attempt, inputs, resources, work_root, services_.runtime);
      } catch (const std::exception& e) {
        r.attempt.task_id = id;
        r.attempt.attempt_number = attempt;
        r.attempt.outcome = Outcome::PermanentFailure;
        r.attempt.cause = FailureCause::StagingError;
        r.attempt.message = e.what();
      }
      {
        std::lock_guard lock(mutex_);
        completions_.push_back({id, std::move(r)});
      }
      cv_.notify_one();
    });
  }

  void wait_for_completions() {
    std::deque<Completion> batch;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return !completions_.empty(); });
      batch.swap(completions_);
    }
    for (auto& c : batch) complete(std::move(c));
  }

  void complete(Completion c) {
    threads_.at(c.id).join();
    threads_.erase(c.id);
    Unit& u = units_.at(c.id);
    --ledger_.running;
    ledger_.cores -= u.resources.cores;
    ledger_.ram_mib -= u.resources.ram_mib;
    ledger_.disk_mib -= u.resources.disk_mib;

    TaskRecord& rec = result_.tasks[c.id];
    const TaskAttempt& attempt = c.result.attempt;
    rec.attempts.push_back(attempt);
    if (attempt.outcome == Outcome::Success) {
      if (u.key && u.key->reusable && services_.cache) {
        try {
          services_.cache->store(*u.key, c.result.outputs, cfg_.run_id);
        } catch (const Error& e) {
          warn("cache store for '" + c.id + "' failed: " + e.what());
        }
      }
      transition(c.id, TaskState::Succeeded);
      publish(c.id, std::move(c.result.outputs));
      return;
    }
    if (classify_failure(attempt, attempt.cause) == FailureClass::Temporary && u.attempts <= cfg_.retries) {
      log(c.id, "AttemptFailed", u.attempts);
      queue_.push_back(c.id);
      return;
    }
    rec.message = attempt.message;
    transition(c.id, TaskState::Failed);
    on_failure(c.id);
  }

  DataflowGraph& graph_;
  const RunConfig& cfg_;
  const Services& services_;
  RunResult& result_;

  std::map<std::string, Unit> units_;
  std::map<std::string, ScatterGroup> groups_;
  std::vector<std::string> queue_;
  std::map<std::string, std::thread> threads_;
  Ledger ledger_;
  bool failed_ = false;
  bool stopping_ = false;

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Completion> completions_;
};

}  // namespace

RunResult run(DataflowGraph graph, const RunConfig& cfg, const Services& services) {
  if (cfg.parallelism < 1) throw std::invalid_argument("parallelism must be at least 1");
  if (cfg.retries < 0) throw std::invalid_argument("retries must not be negative");
  if (cfg.machine.cores < 1 || cfg.machine.ram_mib < 1 || cfg.machine.disk_mib < 0) {
    throw std::invalid_argument("machine capacity must be positive");
  }
  RunResult result;
  result.run_id = cfg.run_id;
  result.started = Clock::now();
  Coordinator(graph, cfg, services, result).run();
  result.finished = Clock::now();
  return result;
}

}  // namespace miniwfl

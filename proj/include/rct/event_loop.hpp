#pragma once

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <queue>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <signal.h>
#include <spawn.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "task.hpp"
#include "time.hpp"

extern char** environ;

namespace rct {

// Clock, timers and payload execution behind the executors. The simulated
// loop advances virtual time over an event heap; the real loop runs payloads
// as OS processes and reports through one ordered channel.
class EventLoop {
 public:
  using Handle = std::uint64_t;
  using Callback = std::function<void()>;
  // (exec_end, success)
  using PayloadDone = std::function<void(Micros, bool)>;

  virtual ~EventLoop() = default;

  virtual Micros now() const = 0;
  virtual Handle at(Micros t, Callback cb) = 0;
  Handle after(Micros delay, Callback cb) { return at(now() + delay, std::move(cb)); }
  virtual void cancel(Handle h) = 0;
  virtual Handle run_payload(const Payload& payload, PayloadDone done) = 0;
  // The completion callback of a killed payload never fires.
  virtual void kill_payload(Handle h) = 0;
  virtual void run() = 0;
  virtual bool simulated() const = 0;
};

class SimLoop final : public EventLoop {
 public:
  Micros now() const override { return now_; }

  Handle at(Micros t, Callback cb) override {
    const Handle h = next_++;
    heap_.push(Event{std::max(t, now_), h, std::move(cb)});
    return h;
  }

  void cancel(Handle h) override { canceled_.insert(h); }

  Handle run_payload(const Payload& payload, PayloadDone done) override {
    const Micros end = now_ + payload.duration;
    return at(end, [end, done = std::move(done)] { done(end, true); });
  }

  void kill_payload(Handle h) override { cancel(h); }

  void run() override {
    while (!heap_.empty()) {
      Event ev = std::move(const_cast<Event&>(heap_.top()));
      heap_.pop();
      if (auto it = canceled_.find(ev.handle); it != canceled_.end()) {
        canceled_.erase(it);
        continue;
      }
      now_ = ev.t;
      ++processed_;
      ev.cb();
    }
  }

  bool simulated() const override { return true; }
  std::uint64_t processed() const { return processed_; }

 private:
  struct Event {
    Micros t;
    Handle handle;
    Callback cb;
    bool operator>(const Event& o) const { return t != o.t ? t > o.t : handle > o.handle; }
  };

  Micros now_ = 0;
  Handle next_ = 1;
  std::uint64_t processed_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> heap_;
  std::unordered_set<Handle> canceled_;
};

enum class PayloadMode { sleep, spin };

class RealLoop final : public EventLoop {
 public:
  explicit RealLoop(PayloadMode mode = PayloadMode::sleep)
      : mode_(mode), start_(std::chrono::steady_clock::now()) {}

  ~RealLoop() override {
    for (auto& [h, r] : running_) {
      if (r.pid > 0) ::kill(r.pid, SIGKILL);
      if (r.stop) r.stop->store(true);
      if (r.waiter.joinable()) r.waiter.join();
    }
  }

  Micros now() const override {
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start_)
        .count();
  }

  Handle at(Micros t, Callback cb) override {
    const Handle h = next_++;
    timers_.push(Timer{t, h, std::move(cb)});
    return h;
  }

  void cancel(Handle h) override { canceled_.insert(h); }

  Handle run_payload(const Payload& payload, PayloadDone done) override {
    const Handle h = next_++;
    Running& r = running_[h];
    r.done = std::move(done);
    if (payload.command.empty() && mode_ == PayloadMode::spin) {
      r.stop = std::make_shared<std::atomic<bool>>(false);
      const Micros until = now() + payload.duration;
      r.waiter = std::thread([this, h, until, stop = r.stop] {
        while (now() < until && !stop->load(std::memory_order_relaxed)) {
        }
        post(h, now(), true);
      });
      return h;
    }

    std::vector<std::string> argv = payload.command;
    if (argv.empty()) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", to_seconds(payload.duration));
      argv = {"sleep", buf};
    }
    std::vector<char*> cargv;
    for (auto& a : argv) cargv.push_back(a.data());
    cargv.push_back(nullptr);
    pid_t pid = 0;
    if (::posix_spawnp(&pid, cargv[0], nullptr, nullptr, cargv.data(), environ) != 0) {
      post(h, now(), false);
      return h;
    }
    r.pid = pid;
    r.waiter = std::thread([this, h, pid] {
      int status = 0;
      while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
      }
      const Micros end = now();
      post(h, end, WIFEXITED(status) && WEXITSTATUS(status) == 0);
    });
    return h;
  }

  void kill_payload(Handle h) override {
    auto it = running_.find(h);
    if (it == running_.end()) {
      cancel(h);
      return;
    }
    it->second.killed = true;
    if (it->second.pid > 0) ::kill(it->second.pid, SIGKILL);
    if (it->second.stop) it->second.stop->store(true);
  }

  void run() override {
    for (;;) {
      while (!timers_.empty() && timers_.top().t <= now()) {
        Timer t = std::move(const_cast<Timer&>(timers_.top()));
        timers_.pop();
        if (auto it = canceled_.find(t.handle); it != canceled_.end()) {
          canceled_.erase(it);
          continue;
        }
        t.cb();
      }

      std::deque<Completion> ready;
      {
        std::lock_guard lock(mu_);
        ready.swap(completions_);
      }
      for (auto& c : ready) {
        auto it = running_.find(c.handle);
        if (it == running_.end()) continue;
        Running r = std::move(it->second);
        running_.erase(it);
        if (r.waiter.joinable()) r.waiter.join();
        if (!r.killed && r.done) r.done(c.end, c.ok);
      }
      if (!ready.empty()) continue;

      drop_canceled_front();
      if (timers_.empty() && running_.empty()) break;

      std::unique_lock lock(mu_);
      if (!completions_.empty()) continue;
      if (timers_.empty()) {
        cv_.wait(lock, [&] { return !completions_.empty(); });
      } else {
        const auto deadline = start_ + std::chrono::microseconds(timers_.top().t);
        cv_.wait_until(lock, deadline, [&] { return !completions_.empty(); });
      }
    }
  }

  bool simulated() const override { return false; }

 private:
  struct Timer {
    Micros t;
    Handle handle;
    Callback cb;
    bool operator>(const Timer& o) const { return t != o.t ? t > o.t : handle > o.handle; }
  };
  struct Completion {
    Handle handle;
    Micros end;
    bool ok;
  };
  struct Running {
    pid_t pid = -1;
    std::thread waiter;
    std::shared_ptr<std::atomic<bool>> stop;
    PayloadDone done;
    bool killed = false;
  };

  void post(Handle h, Micros end, bool ok) {
    {
      std::lock_guard lock(mu_);
      completions_.push_back(Completion{h, end, ok});
    }
    cv_.notify_one();
  }

  void drop_canceled_front() {
    while (!timers_.empty()) {
      auto it = canceled_.find(timers_.top().handle);
      if (it == canceled_.end()) return;
      canceled_.erase(it);
      timers_.pop();
    }
  }

  PayloadMode mode_;
  std::chrono::steady_clock::time_point start_;
  Handle next_ = 1;
  std::priority_queue<Timer, std::vector<Timer>, std::greater<>> timers_;
  std::unordered_set<Handle> canceled_;
  std::map<Handle, Running> running_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Completion> completions_;
};

}  // namespace rct

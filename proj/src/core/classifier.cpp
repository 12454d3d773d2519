// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include <cerrno>
#include <csignal>
#include <cstring>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "mdf/error.hpp"
#include "mdf/evaluator.hpp"

namespace mdf {

using nlohmann::json;

namespace {

class Fd {
 public:
  Fd() = default;
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  void assign(int fd) {
    reset();
    fd_ = fd;
  }
  void reset() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
};

void make_pipe(Fd& r, Fd& w) {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) {
    fail(ErrorCode::io, "pipe2: %s", std::strerror(errno));
  }
  r.assign(fds[0]);
  w.assign(fds[1]);
}

// Writes everything unless the reader goes away first.
void write_all(int fd, const std::string& data) {
  sigset_t block;
  sigemptyset(&block);
  sigaddset(&block, SIGPIPE);
  pthread_sigmask(SIG_BLOCK, &block, nullptr);
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    off += static_cast<std::size_t>(n);
  }
  // Drop a pending SIGPIPE raised by a closed reader.
  const timespec zero{0, 0};
  while (sigtimedwait(&block, nullptr, &zero) > 0) {
  }
}

}  // namespace

ExternalClassifier::ExternalClassifier(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
  if (command_.empty()) {
    fail(ErrorCode::invalid_argument, "external_classifier: empty command");
  }
}

std::vector<int> ExternalClassifier::classify(std::span<const Transcript> transcripts) const {
  std::string input;
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    input += json({{"id", i}, {"prompt", transcripts[i].prompt}, {"response", transcripts[i].response}})
                 .dump(-1, ' ', false, json::error_handler_t::replace);
    input += '\n';
  }

  Fd in_r, in_w, out_r, out_w;
  make_pipe(in_r, in_w);
  make_pipe(out_r, out_w);
  const pid_t pid = ::fork();
  if (pid < 0) {
    fail(ErrorCode::io, "fork: %s", std::strerror(errno));
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(in_r.get(), STDIN_FILENO);
    ::dup2(out_w.get(), STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);  // also done in the child; whichever runs first wins
  in_r.reset();
  out_w.reset();

  std::thread writer([&] {
    write_all(in_w.get(), input);
    in_w.reset();
  });

  std::string output;
  bool timed_out = false;
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  char buf[65536];
  for (;;) {
    const auto left =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
    if (left <= 0) {
      timed_out = true;
      break;
    }
    pollfd p{out_r.get(), POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(left, 1000)));
    if (rc < 0 && errno != EINTR) {
      break;
    }
    if (rc <= 0) {
      continue;
    }
    const ssize_t n = ::read(out_r.get(), buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    output.append(buf, static_cast<std::size_t>(n));
  }
  if (timed_out) {
    // The shell may have forked the command; take down the whole group.
    ::kill(-pid, SIGKILL);
  }
  writer.join();
  out_r.reset();
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (timed_out) {
    fail(ErrorCode::evaluator, "classifier timed out after %lld ms", static_cast<long long>(timeout_.count()));
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    fail(ErrorCode::evaluator, "classifier '%s' failed (%s %d)", command_.c_str(),
         WIFEXITED(status) ? "exit status" : "signal", WIFEXITED(status) ? WEXITSTATUS(status) : WTERMSIG(status));
  }

  std::vector<int> labels(transcripts.size(), -1);
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < output.size()) {
    std::size_t end = output.find('\n', start);
    if (end == std::string::npos) end = output.size();
    const std::string line = output.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    std::size_t id = 0;
    int unsafe = 0;
    try {
      const json j = json::parse(line);
      id = j.at("id").get<std::size_t>();
      const json& u = j.at("unsafe");
      unsafe = u.is_boolean() ? (u.get<bool>() ? 1 : 0) : u.get<int>();
    } catch (const json::exception& e) {
      fail(ErrorCode::evaluator, "classifier output line %zu: %s", line_no, e.what());
    }
    if (unsafe != 0 && unsafe != 1) {
      fail(ErrorCode::evaluator, "classifier output line %zu: unsafe must be 0 or 1", line_no);
    }
    if (id >= labels.size()) {
      fail(ErrorCode::evaluator, "classifier returned unknown id %zu", id);
    }
    if (labels[id] != -1) {
      fail(ErrorCode::evaluator, "classifier returned id %zu twice", id);
    }
    labels[id] = unsafe;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == -1) {
      fail(ErrorCode::evaluator, "classifier returned no label for id %zu", i);
    }
  }
  return labels;
}

void ExternalClassifier::score(std::span<Transcript> transcripts) {
  const std::vector<int> labels = classify(transcripts);
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    transcripts[i].score = static_cast<double>(labels[i]);
  }
}

json ExternalClassifier::describe() const {
  return {{"kind", "external_classifier"}, {"command", command_}, {"timeout_s", timeout_.count() / 1000.0}};
}

}  // namespace mdf

#include "picl/lm/external.hpp"

#include <cerrno>
#include <cstring>
#include <map>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "picl/common.hpp"

extern char** environ;

namespace picl::lm {

namespace {

using Clock = std::chrono::steady_clock;

// Child went away; the batch can be retried on a fresh process.
struct ChildLost : Error {
  using Error::Error;
};

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return left.count() < 0 ? 0 : static_cast<int>(left.count());
}

}  // namespace

ExternalScorer::ExternalScorer(ExternalScorerOptions options) : opt_(std::move(options)) {
  if (opt_.argv.empty()) throw ConfigError("external scorer command is empty");
  if (opt_.max_in_flight == 0) opt_.max_in_flight = 1;
  start();
}

ExternalScorer::~ExternalScorer() { stop(); }

std::string ExternalScorer::describe() const {
  std::string s = "external:";
  for (std::size_t i = 0; i < opt_.argv.size(); ++i) s += (i ? " " : "") + opt_.argv[i];
  return s;
}

void ExternalScorer::start() {
  int sv[2];
  if (socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
    throw Error(std::string("socketpair failed: ") + std::strerror(errno));
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_adddup2(&fa, sv[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&fa, sv[1], STDOUT_FILENO);

  std::vector<std::string> env_store;
  for (char** e = environ; e && *e; ++e) env_store.emplace_back(*e);
  env_store.insert(env_store.end(), opt_.env.begin(), opt_.env.end());
  std::vector<char*> envp, argv;
  for (auto& e : env_store) envp.push_back(e.data());
  envp.push_back(nullptr);
  std::vector<std::string> argv_store = opt_.argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  argv.push_back(nullptr);

  const int rc = posix_spawnp(&pid_, argv[0], &fa, nullptr, argv.data(), envp.data());
  posix_spawn_file_actions_destroy(&fa);
  close(sv[1]);
  if (rc != 0) {
    close(sv[0]);
    pid_ = -1;
    throw Error("cannot start scorer '" + opt_.argv[0] + "': " + std::strerror(rc));
  }
  fd_ = sv[0];
  inbuf_.clear();

  std::string line;
  const auto deadline = Clock::now() + opt_.timeout;
  if (!read_line(line, deadline)) {
    stop();
    throw Error("scorer exited before signalling readiness");
  }
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("ready", false) != true) {
    stop();
    throw ProtocolError("expected {\"ready\": true} from scorer", line);
  }
}

void ExternalScorer::stop() {
  if (fd_ >= 0) {
    shutdown(fd_, SHUT_RDWR);
    close(fd_);
    fd_ = -1;
  }
  if (pid_ > 0) {
    int status = 0;
    // give a cooperative child a moment to exit on EOF
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      usleep(2000);
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

// false on EOF; throws on timeout
bool ExternalScorer::read_line(std::string& line, Clock::time_point deadline) {
  for (;;) {
    const auto nl = inbuf_.find('\n');
    if (nl != std::string::npos) {
      line = inbuf_.substr(0, nl);
      inbuf_.erase(0, nl + 1);
      return true;
    }
    pollfd p{fd_, POLLIN, 0};
    const int r = poll(&p, 1, remaining_ms(deadline));
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) throw Error("scorer timed out");
    char buf[65536];
    const ssize_t n = recv(fd_, buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    inbuf_.append(buf, static_cast<std::size_t>(n));
  }
}

Score ExternalScorer::logprob(std::string_view text) {
  const std::string t(text);
  return logprob_batch(std::span<const std::string>(&t, 1))[0];
}

std::vector<Score> ExternalScorer::logprob_batch(std::span<const std::string> texts) {
  std::vector<Score> out(texts.size());
  std::vector<bool> done(texts.size(), false);
  std::size_t attempts = 0;
  for (;;) {
    if (fd_ < 0) start();
    try {
      std::map<std::uint64_t, std::size_t> pending;  // request id -> text index
      std::size_t next = 0;
      std::size_t remaining = 0;
      for (bool d : done) remaining += d ? 0 : 1;
      std::string outbuf;
      auto deadline = Clock::now() + opt_.timeout;
      while (remaining > 0) {
        while (pending.size() < opt_.max_in_flight && next < texts.size()) {
          if (!done[next]) {
            const std::uint64_t id = next_id_++;
            pending[id] = next;
            outbuf += nlohmann::json{{"id", id}, {"text", texts[next]}}.dump() + "\n";
          }
          ++next;
        }
        pollfd p{fd_, static_cast<short>(POLLIN | (outbuf.empty() ? 0 : POLLOUT)), 0};
        const int r = poll(&p, 1, remaining_ms(deadline));
        if (r < 0 && errno == EINTR) continue;
        if (r == 0) {
          stop();
          throw Error("scorer timed out after " + std::to_string(opt_.timeout.count()) + " ms");
        }
        if ((p.revents & POLLOUT) && !outbuf.empty()) {
          const ssize_t n = send(fd_, outbuf.data(), outbuf.size(), MSG_NOSIGNAL | MSG_DONTWAIT);
          if (n < 0 && errno != EAGAIN && errno != EINTR) throw ChildLost("write to scorer failed");
          if (n > 0) outbuf.erase(0, static_cast<std::size_t>(n));
        }
        if (p.revents & (POLLIN | POLLHUP | POLLERR)) {
          char buf[65536];
          const ssize_t n = recv(fd_, buf, sizeof buf, MSG_DONTWAIT);
          if (n == 0 || (n < 0 && errno != EAGAIN && errno != EINTR)) throw ChildLost("scorer exited");
          if (n > 0) inbuf_.append(buf, static_cast<std::size_t>(n));
        }
        std::size_t nl;
        while ((nl = inbuf_.find('\n')) != std::string::npos) {
          const std::string line = inbuf_.substr(0, nl);
          inbuf_.erase(0, nl + 1);
          const auto j = nlohmann::json::parse(line, nullptr, false);
          if (j.is_discarded() || !j.is_object()) throw ProtocolError("malformed scorer response", line);
          if (j.contains("error"))
            throw ProtocolError("scorer reported an error: " + j["error"].dump(), line);
          if (!j.contains("id") || !j["id"].is_number_unsigned() || !j.contains("logprob") ||
              !j["logprob"].is_number() || !j.contains("num_tokens") ||
              !j["num_tokens"].is_number_unsigned())
            throw ProtocolError("scorer response lacks id, logprob or num_tokens", line);
          const auto it = pending.find(j["id"].get<std::uint64_t>());
          if (it == pending.end()) throw ProtocolError("scorer answered an unknown request id", line);
          out[it->second] = {j["logprob"].get<double>(), j["num_tokens"].get<std::size_t>()};
          done[it->second] = true;
          pending.erase(it);
          --remaining;
          deadline = Clock::now() + opt_.timeout;
        }
      }
      return out;
    } catch (const ChildLost&) {
      stop();
      if (attempts++ >= opt_.max_restarts)
        throw Error("scorer exited repeatedly; gave up after " + std::to_string(attempts) + " restarts");
      ++restarts_;
    } catch (...) {
      stop();
      throw;
    }
  }
}

std::vector<std::string> ExternalScorer::split_command(std::string_view command) {
  std::vector<std::string> out;
  std::string cur;
  bool in_word = false;
  char quote = 0;
  for (std::size_t i = 0; i < command.size(); ++i) {
    const char ch = command[i];
    if (quote) {
      if (ch == quote) {
        quote = 0;
      } else if (ch == '\\' && quote == '"' && i + 1 < command.size()) {
        cur += command[++i];
      } else {
        cur += ch;
      }
    } else if (ch == '\'' || ch == '"') {
      quote = ch;
      in_word = true;
    } else if (ch == '\\' && i + 1 < command.size()) {
      cur += command[++i];
      in_word = true;
    } else if (ch == ' ' || ch == '\t' || ch == '\n') {
      if (in_word) out.push_back(std::move(cur));
      cur.clear();
      in_word = false;
    } else {
      cur += ch;
      in_word = true;
    }
  }
  if (quote) throw ConfigError("unterminated quote in scorer command");
  if (in_word) out.push_back(std::move(cur));
  return out;
}

}  // namespace picl::lm

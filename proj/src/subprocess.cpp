#include "hiva/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

#include "hiva/errors.hpp"

namespace hiva {

namespace {

void set_nonblocking(int fd) { fcntl(fd, F_SETFL, fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

}  // namespace

ProcessResult run_process(const std::vector<std::string>& argv, const std::string& input,
                          std::chrono::milliseconds timeout) {
    if (argv.empty()) throw SandboxFailure("empty argv");

    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0 || pipe(err_pipe) != 0)
        throw SandboxFailure("pipe() failed");

    const pid_t pid = fork();
    if (pid < 0) throw SandboxFailure("fork() failed");

    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        dup2(err_pipe[1], STDERR_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        close(err_pipe[0]);
        close(err_pipe[1]);

        std::vector<char*> args;
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);

        // scrubbed environment: tools run with no inherited credentials
        std::string path = "PATH=/usr/local/bin:/usr/bin:/bin";
        if (const char* p = std::getenv("PATH")) path = std::string("PATH=") + p;
        std::string lc = "LC_ALL=C";
        char* envp[] = {path.data(), lc.data(), nullptr};

        execvpe(args[0], args.data(), envp);
        _exit(127);
    }

    close(in_pipe[0]);
    close(out_pipe[1]);
    close(err_pipe[1]);
    set_nonblocking(in_pipe[1]);
    set_nonblocking(out_pipe[0]);
    set_nonblocking(err_pipe[0]);

    ProcessResult result;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    size_t written = 0;
    bool stdin_open = true;

    auto pump = [&]() -> bool {  // false once both output pipes are closed
        struct pollfd fds[3];
        int n = 0;
        int out_idx = -1, err_idx = -1, in_idx = -1;
        if (out_pipe[0] >= 0) {
            out_idx = n;
            fds[n++] = {out_pipe[0], POLLIN, 0};
        }
        if (err_pipe[0] >= 0) {
            err_idx = n;
            fds[n++] = {err_pipe[0], POLLIN, 0};
        }
        if (stdin_open) {
            in_idx = n;
            fds[n++] = {in_pipe[1], POLLOUT, 0};
        }
        if (n == 0) return false;

        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        const int wait_ms = static_cast<int>(std::max<long long>(0, std::min<long long>(left.count(), 50)));
        if (poll(fds, static_cast<nfds_t>(n), wait_ms) < 0 && errno != EINTR)
            return out_pipe[0] >= 0 || err_pipe[0] >= 0;

        char buf[4096];
        if (out_idx >= 0 && (fds[out_idx].revents & (POLLIN | POLLHUP))) {
            const ssize_t r = read(out_pipe[0], buf, sizeof(buf));
            if (r > 0)
                result.out.append(buf, static_cast<size_t>(r));
            else if (r == 0 || (r < 0 && errno != EAGAIN)) {
                close(out_pipe[0]);
                out_pipe[0] = -1;
            }
        }
        if (err_idx >= 0 && (fds[err_idx].revents & (POLLIN | POLLHUP))) {
            const ssize_t r = read(err_pipe[0], buf, sizeof(buf));
            if (r > 0)
                result.err.append(buf, static_cast<size_t>(r));
            else if (r == 0 || (r < 0 && errno != EAGAIN)) {
                close(err_pipe[0]);
                err_pipe[0] = -1;
            }
        }
        if (in_idx >= 0 && (fds[in_idx].revents & (POLLOUT | POLLERR | POLLHUP))) {
            if (fds[in_idx].revents & (POLLERR | POLLHUP)) {
                close(in_pipe[1]);
                stdin_open = false;
            } else {
                const ssize_t w =
                    write(in_pipe[1], input.data() + written, input.size() - written);
                if (w > 0) written += static_cast<size_t>(w);
                if (written >= input.size() || (w < 0 && errno != EAGAIN)) {
                    close(in_pipe[1]);
                    stdin_open = false;
                }
            }
        }
        return out_pipe[0] >= 0 || err_pipe[0] >= 0;
    };

    if (input.empty() && stdin_open) {
        close(in_pipe[1]);
        stdin_open = false;
    }

    int status = 0;
    bool exited = false;
    for (;;) {
        const bool pipes_alive = pump();
        if (!exited) {
            const pid_t r = waitpid(pid, &status, WNOHANG);
            if (r == pid) exited = true;
        }
        if (exited && !pipes_alive) break;
        if (std::chrono::steady_clock::now() >= deadline) {
            result.timed_out = true;
            kill(pid, SIGKILL);
            if (!exited) waitpid(pid, &status, 0);
            break;
        }
    }

    if (stdin_open) close(in_pipe[1]);
    if (out_pipe[0] >= 0) close(out_pipe[0]);
    if (err_pipe[0] >= 0) close(err_pipe[0]);

    if (result.timed_out)
        result.exit_code = -1;
    else if (WIFEXITED(status))
        result.exit_code = WEXITSTATUS(status);
    else
        result.exit_code = 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
    return result;
}

}  // namespace hiva

/*
 * Copyright 2026 The jobjail Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Fixture processes with known, adversarial behavior. Every process a probe
// creates is appended to $JOBJAIL_PROBE_SIDECHANNEL as "<pid> <ppid> <role>"
// before it does anything else.

#include "jobjail/units.hpp"

#include <CLI11.hpp>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

extern char** environ;

namespace {

constexpr int kAllocFailed = 3;

void report(pid_t pid, pid_t ppid, const char* role)
{
    const char* path = std::getenv("JOBJAIL_PROBE_SIDECHANNEL");
    if (!path || !*path)
        return;
    int fd = ::open(path, O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0)
        return;
    char line[96];
    int n = std::snprintf(line, sizeof line, "%d %d %s\n", pid, ppid, role);
    // One write per line keeps concurrent appends intact.
    [[maybe_unused]] auto w = ::write(fd, line, static_cast<std::size_t>(n));
    ::close(fd);
}

void report_self(const char* role)
{
    report(::getpid(), ::getppid(), role);
}

void sleep_seconds(double s)
{
    if (s < 0)
    {
        while (true)
            ::pause();
    }
    std::this_thread::sleep_for(std::chrono::duration<double>(s));
}

std::vector<pid_t> g_children;

extern "C" void kill_children_and_exit(int sig)
{
    for (pid_t c : g_children)
        ::kill(c, SIGTERM);
    ::_exit(128 + sig);
}

int orphaner(double sleep_a, double sleep_b)
{
    report_self("parent");
    struct sigaction sa{};
    sa.sa_handler = kill_children_and_exit;
    ::sigaction(SIGTERM, &sa, nullptr);
    ::sigaction(SIGINT, &sa, nullptr);

    for (double s : {sleep_a, sleep_b})
    {
        pid_t c = ::fork();
        if (c < 0)
            return 1;
        if (c == 0)
        {
            ::signal(SIGTERM, SIG_DFL);
            ::signal(SIGINT, SIG_DFL);
            // Background jobs of a job-control shell lead their own group.
            ::setpgid(0, 0);
            sleep_seconds(s);
            ::_exit(0);
        }
        ::setpgid(c, c);
        report(c, ::getpid(), "sleeper");
        g_children.push_back(c);
    }
    for (pid_t c : g_children)
    {
        int ws = 0;
        while (::waitpid(c, &ws, 0) < 0 && errno == EINTR)
        {
        }
    }
    return 0;
}

int memhog(std::uint64_t total, std::uint64_t rate, bool touch, double hold, std::uint64_t chunk)
{
    report_self("memhog");
    auto start = std::chrono::steady_clock::now();
    long page = ::sysconf(_SC_PAGESIZE);
    std::uint64_t done = 0;
    while (done < total)
    {
        std::uint64_t len = std::min(chunk, total - done);
        void* p = ::mmap(nullptr, len, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
        if (p == MAP_FAILED)
        {
            std::fprintf(stderr, "memhog: allocation failed after %llu bytes: %s\n",
                         static_cast<unsigned long long>(done), std::strerror(errno));
            return kAllocFailed;
        }
        if (touch)
        {
            ::madvise(p, len, MADV_HUGEPAGE);
            auto* bytes = static_cast<volatile char*>(p);
            for (std::uint64_t off = 0; off < len; off += static_cast<std::uint64_t>(page))
                bytes[off] = 1;
        }
        done += len;
        if (rate > 0)
        {
            auto due = start + std::chrono::duration<double>(static_cast<double>(done) / static_cast<double>(rate));
            std::this_thread::sleep_until(due);
        }
    }
    std::printf("memhog: allocated %llu bytes\n", static_cast<unsigned long long>(done));
    std::fflush(stdout);
    sleep_seconds(hold);
    return 0;
}

int threads(int n, bool busy, double seconds)
{
    report_self("threads");
    std::atomic<bool> stop{false};
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i)
    {
        pool.emplace_back([&] {
            volatile std::uint64_t x = 0;
            while (!stop.load(std::memory_order_relaxed))
            {
                if (busy)
                    for (int k = 0; k < 100000; ++k)
                        x = x + 1;
                else
                    std::this_thread::sleep_for(std::chrono::milliseconds(50));
            }
        });
    }
    sleep_seconds(seconds);
    stop = true;
    for (auto& t : pool)
        t.join();
    return 0;
}

void populate(char* p, std::size_t len, bool write)
{
#ifdef MADV_POPULATE_READ
    if (!write && ::madvise(p, len, MADV_POPULATE_READ) == 0)
        return;
#endif
    long page = ::sysconf(_SC_PAGESIZE);
    volatile char sink = 0;
    for (std::size_t off = 0; off < len; off += static_cast<std::size_t>(page))
    {
        if (write)
            p[off] = 1;
        else
            sink = sink + p[off];
    }
}

int deeptree(int depth, std::uint64_t rss_each, double seconds)
{
    // One shared region mapped by every level: each process shows rss_each
    // resident while the host pays for it once.
    char* region = nullptr;
    if (rss_each > 0)
    {
        void* p = ::mmap(nullptr, rss_each, PROT_READ | PROT_WRITE, MAP_SHARED | MAP_ANONYMOUS, -1, 0);
        if (p == MAP_FAILED)
            return kAllocFailed;
        region = static_cast<char*>(p);
        populate(region, rss_each, true);
    }
    report_self("level");
    for (int level = 1; level < depth; ++level)
    {
        pid_t c = ::fork();
        if (c < 0)
            return 1;
        if (c > 0)
        {
            report(c, ::getpid(), "level");
            int ws = 0;
            while (::waitpid(c, &ws, 0) < 0 && errno == EINTR)
            {
            }
            return WIFEXITED(ws) ? WEXITSTATUS(ws) : 1;
        }
        if (region)
            populate(region, rss_each, false);
    }
    std::printf("deeptree: leaf %d ready\n", ::getpid());
    std::fflush(stdout);
    sleep_seconds(seconds);
    return 0;
}

int stubborn(double seconds)
{
    ::signal(SIGTERM, SIG_IGN);
    report_self("stubborn");
    sleep_seconds(seconds);
    return 0;
}

int escaper(double delay, double seconds)
{
    report_self("escaper");
    pid_t c = ::fork();
    if (c < 0)
        return 1;
    if (c == 0)
    {
        if (delay > 0)
            sleep_seconds(delay);
        ::setsid();
        sleep_seconds(seconds);
        ::_exit(0);
    }
    report(c, ::getpid(), "escapee");
    sleep_seconds(seconds);
    return 0;
}

int env_dump(const std::string& out)
{
    report_self("env-dump");
    std::string text;
    for (char** e = environ; *e; ++e)
    {
        text += *e;
        text += '\n';
    }
    if (out.empty())
    {
        std::fwrite(text.data(), 1, text.size(), stdout);
        return 0;
    }
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    f << text;
    return f ? 0 : 1;
}

int spin(double seconds)
{
    report_self("spin");
    auto end = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
    volatile std::uint64_t x = 0;
    while (std::chrono::steady_clock::now() < end)
        for (int k = 0; k < 100000; ++k)
            x = x + 1;
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"jobjail test fixtures", "jobjail-probe"};
    app.require_subcommand(1);
    std::string total = "1M", rate = "0", chunk = "64M";
    bool touch = false, busy = false;
    double a = 100, b = 150, hold = 0, seconds = -1, delay = 0;
    int n = 0, depth = 1, code = 0;
    std::string rss_each = "0", out;

    auto* orph = app.add_subcommand("orphaner", "parent with two sleepers in their own groups");
    orph->add_option("sleep_a", a)->required();
    orph->add_option("sleep_b", b)->required();

    auto* hog = app.add_subcommand("memhog", "allocate memory in chunks");
    hog->add_option("--total", total);
    hog->add_option("--rate", rate, "bytes per second, 0 for unthrottled");
    hog->add_flag("--touch", touch);
    hog->add_option("--hold", hold, "seconds to hold the memory");
    hog->add_option("--chunk", chunk);

    auto* thr = app.add_subcommand("threads", "hold n extra threads");
    thr->add_option("n", n)->required();
    thr->add_flag("--busy", busy);
    thr->add_option("--seconds", seconds);

    auto* deep = app.add_subcommand("deeptree", "chain of processes each holding memory");
    deep->add_option("depth", depth)->required();
    deep->add_option("rss_each", rss_each)->required();
    deep->add_option("--seconds", seconds);

    auto* stub = app.add_subcommand("stubborn", "ignore SIGTERM");
    stub->add_option("--seconds", seconds);

    auto* esc = app.add_subcommand("escaper", "child leaves the session");
    esc->add_option("--seconds", seconds);
    esc->add_option("--delay", delay, "seconds the child stays put before leaving");

    auto* env = app.add_subcommand("env-dump", "write the environment, one entry per line");
    env->add_option("--out", out);

    auto* sp = app.add_subcommand("spin", "burn CPU");
    sp->add_option("--seconds", seconds);

    auto* sl = app.add_subcommand("sleep", "sleep");
    sl->add_option("--seconds", seconds);

    auto* ex = app.add_subcommand("exit", "exit with a code");
    ex->add_option("code", code)->required();

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (orph->parsed())
            return orphaner(a, b);
        if (hog->parsed())
            return memhog(jobjail::parse_size(total), jobjail::parse_size(rate), touch, hold,
                          jobjail::parse_size(chunk));
        if (thr->parsed())
            return threads(n, busy, seconds);
        if (deep->parsed())
            return deeptree(depth, jobjail::parse_size(rss_each), seconds);
        if (stub->parsed())
            return stubborn(seconds);
        if (esc->parsed())
            return escaper(delay, seconds);
        if (env->parsed())
            return env_dump(out);
        if (sp->parsed())
            return spin(seconds < 0 ? 1 : seconds);
        if (sl->parsed())
        {
            report_self("sleep");
            sleep_seconds(seconds);
            return 0;
        }
        if (ex->parsed())
            return code;
    }
    catch (const std::exception& e)
    {
        std::fprintf(stderr, "jobjail-probe: %s\n", e.what());
        return 2;
    }
    return 2;
}

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

#include "jobjail/jail.hpp"

#include "jobjail/error.hpp"

#include <fmt/format.h>

#include <fcntl.h>
#include <sched.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

namespace jobjail {

namespace fs = std::filesystem;

const char* to_string(IsolationBackend backend) noexcept
{
    switch (backend)
    {
        case IsolationBackend::ProcessGroup: return "process-group";
        case IsolationBackend::Subreaper: return "subreaper";
        case IsolationBackend::PidNamespace: return "pid-namespace";
    }
    return "process-group";
}

IsolationBackend parse_backend(std::string_view text)
{
    if (text == "pg" || text == "process-group")
        return IsolationBackend::ProcessGroup;
    if (text == "subreaper")
        return IsolationBackend::Subreaper;
    if (text == "pidns" || text == "pid-namespace")
        return IsolationBackend::PidNamespace;
    throw Error(ErrorKind::Usage, fmt::format("unknown isolation backend '{}'", text));
}

const char* to_string(Signal sig) noexcept
{
    return sig == Signal::Term ? "TERM" : "KILL";
}

const char* to_string(ProcessClass c) noexcept
{
    switch (c)
    {
        case ProcessClass::Normal: return "normal";
        case ProcessClass::Zombie: return "zombie";
        case ProcessClass::Orphan: return "orphan";
        case ProcessClass::DaemonLike: return "daemon-like";
    }
    return "normal";
}

int exit_code_of(int wait_status)
{
    if (WIFEXITED(wait_status))
        return WEXITSTATUS(wait_status);
    if (WIFSIGNALED(wait_status))
        return 128 + WTERMSIG(wait_status);
    return 1;
}

std::string describe_wait_status(int wait_status)
{
    if (WIFEXITED(wait_status))
        return fmt::format("exited with {}", WEXITSTATUS(wait_status));
    if (WIFSIGNALED(wait_status))
        return fmt::format("killed by signal {} ({})", WTERMSIG(wait_status), ::strsignal(WTERMSIG(wait_status)));
    return fmt::format("wait status {:#x}", wait_status);
}

std::uint64_t boot_ticks_now()
{
    timespec ts{};
    ::clock_gettime(CLOCK_BOOTTIME, &ts);
    auto hz = static_cast<std::uint64_t>(::sysconf(_SC_CLK_TCK));
    return static_cast<std::uint64_t>(ts.tv_sec) * hz + static_cast<std::uint64_t>(ts.tv_nsec) * hz / 1'000'000'000ULL;
}

// ---------------------------------------------------------------------------
// Membership

void MembershipTracker::observe(const ProcessTable& members, pid_t reaper)
{
    for (const auto& r : members.records())
    {
        auto it = entries_.find(r.pid);
        if (it != entries_.end() && it->second.start_time != r.start_time)
        {
            entries_.erase(it);
            it = entries_.end();
        }
        if (it == entries_.end())
            it = entries_.emplace(r.pid, Entry{r.start_time, r.ppid, false, r.comm}).first;
        if (r.ppid != reaper && r.ppid != 1)
            it->second.seen_with_parent = true;
    }
}

const MembershipTracker::Entry* MembershipTracker::find(const ProcessRecord& rec) const
{
    auto it = entries_.find(rec.pid);
    return it != entries_.end() && it->second.start_time == rec.start_time ? &it->second : nullptr;
}

ProcessClass classify(const ProcessRecord& record, const ProcessTable& table, const MembershipTracker& history,
                      pid_t reaper)
{
    (void)table;
    if (record.is_zombie())
        return ProcessClass::Zombie;
    if (record.ppid == 1 || record.ppid == reaper)
    {
        const auto* seen = history.find(record);
        return seen && seen->seen_with_parent ? ProcessClass::Orphan : ProcessClass::DaemonLike;
    }
    return ProcessClass::Normal;
}

ProcessTable members_of(const ProcessTable& host, const JailHandle& h)
{
    switch (h.backend)
    {
        case IsolationBackend::ProcessGroup:
            return host.filter([&](const ProcessRecord& r) { return h.pgid > 0 && r.pgid == h.pgid; });

        case IsolationBackend::PidNamespace:
            return host.filter(
                [&](const ProcessRecord& r) { return h.ns_token && r.pid_ns == h.ns_token && r.pid != h.init_pid; });

        case IsolationBackend::Subreaper: {
            std::unordered_multimap<pid_t, pid_t> children;
            std::vector<pid_t> frontier;
            for (const auto& r : host.records())
            {
                children.emplace(r.ppid, r.pid);
                bool seed = (h.pgid > 0 && r.pgid == h.pgid) || r.pid == h.root_pid ||
                            (r.ppid == h.supervisor_pid && r.start_time >= h.created_ticks);
                if (seed)
                    frontier.push_back(r.pid);
            }
            std::set<pid_t> in(frontier.begin(), frontier.end());
            while (!frontier.empty())
            {
                pid_t p = frontier.back();
                frontier.pop_back();
                auto [lo, hi] = children.equal_range(p);
                for (auto it = lo; it != hi; ++it)
                    if (in.insert(it->second).second)
                        frontier.push_back(it->second);
            }
            return host.filter([&](const ProcessRecord& r) { return in.count(r.pid) != 0; });
        }
    }
    return {};
}

ProcessTable members(ProcessInspector& inspector, const JailHandle& handle)
{
    return members_of(inspector.read_table(), handle);
}

std::vector<ProcessRecord> detect_escapees(const ProcessTable& host, const JailHandle& handle,
                                           const MembershipTracker& tracked)
{
    std::vector<ProcessRecord> out;
    if (tracked.size() == 0)
        return out;
    auto current = members_of(host, handle);
    std::set<pid_t> escaped;
    for (const auto& r : host.records())
    {
        if (!r.is_zombie() && tracked.tracked(r) && !current.contains(r.pid))
            escaped.insert(r.pid);
    }
    // Descendants of an escapee escaped with it.
    bool grew = !escaped.empty();
    while (grew)
    {
        grew = false;
        for (const auto& r : host.records())
        {
            if (!r.is_zombie() && escaped.count(r.ppid) && !escaped.count(r.pid) && !current.contains(r.pid))
            {
                escaped.insert(r.pid);
                grew = true;
            }
        }
    }
    for (pid_t p : escaped)
        out.push_back(*host.find(p));
    return out;
}

// ---------------------------------------------------------------------------
// Child-side launch. Everything between fork/clone and exec is limited to
// async-signal-safe calls.

namespace {

enum ChildMsgKind : int { HostPid = 0, FailSignals, FailRlimit, FailAffinity, FailChdir, FailExec };

struct ChildMsg
{
    int kind;
    int value;
};

struct ExecPlan
{
    std::string path;
    std::vector<std::string> argv_storage;
    std::vector<std::string> envp_storage;
    std::vector<char*> argv;
    std::vector<char*> envp;
    std::optional<rlimit> data_limit;
    std::optional<rlimit> rss_limit;
    std::optional<cpu_set_t> cpus;
    std::string workdir;
    bool report_host_pid = false;
};

void write_msg(int fd, int kind, int value) noexcept
{
    ChildMsg m{kind, value};
    while (::write(fd, &m, sizeof m) < 0 && errno == EINTR)
    {
    }
}

pid_t raw_clone(unsigned long flags) noexcept
{
    return static_cast<pid_t>(::syscall(SYS_clone, flags | SIGCHLD, nullptr, nullptr, nullptr, nullptr));
}

int read_own_host_pid() noexcept
{
    char buf[32];
    ssize_t n = ::readlink("/proc/self", buf, sizeof buf - 1);
    if (n <= 0)
        return -1;
    int pid = 0;
    for (ssize_t i = 0; i < n; ++i)
    {
        if (buf[i] < '0' || buf[i] > '9')
            return -1;
        pid = pid * 10 + (buf[i] - '0');
    }
    return pid;
}

[[noreturn]] void exec_child(const ExecPlan& plan, int go_fd, int msg_fd) noexcept
{
    sigset_t none;
    sigemptyset(&none);
    if (::sigprocmask(SIG_SETMASK, &none, nullptr) != 0)
    {
        write_msg(msg_fd, FailSignals, errno);
        ::_exit(127);
    }
    struct sigaction dfl{};
    dfl.sa_handler = SIG_DFL;
    for (int sig = 1; sig < NSIG; ++sig)
    {
        if (sig != SIGKILL && sig != SIGSTOP)
            ::sigaction(sig, &dfl, nullptr);
    }
    ::setpgid(0, 0);

    if (plan.report_host_pid)
        write_msg(msg_fd, HostPid, read_own_host_pid());

    if (go_fd >= 0)
    {
        char c = 0;
        ssize_t n;
        while ((n = ::read(go_fd, &c, 1)) < 0 && errno == EINTR)
        {
        }
        if (n != 1)
            ::_exit(126);
        ::close(go_fd);
    }
    if (plan.data_limit && ::setrlimit(RLIMIT_DATA, &*plan.data_limit) != 0)
    {
        write_msg(msg_fd, FailRlimit, errno);
        ::_exit(127);
    }
    if (plan.rss_limit && ::setrlimit(RLIMIT_RSS, &*plan.rss_limit) != 0)
    {
        write_msg(msg_fd, FailRlimit, errno);
        ::_exit(127);
    }
    if (plan.cpus && ::sched_setaffinity(0, sizeof(cpu_set_t), &*plan.cpus) != 0)
    {
        write_msg(msg_fd, FailAffinity, errno);
        ::_exit(127);
    }
    if (!plan.workdir.empty() && ::chdir(plan.workdir.c_str()) != 0)
    {
        write_msg(msg_fd, FailChdir, errno);
        ::_exit(127);
    }
    ::execve(plan.path.c_str(), plan.argv.data(), plan.envp.data());
    write_msg(msg_fd, FailExec, errno);
    ::_exit(127);
}

// Namespace init: launches the job, reaps everything re-parented to it and
// forwards TERM to the whole namespace. Exits once the namespace is empty.
std::atomic<int> g_init_term{0};

void init_forward_term(int) noexcept
{
    int saved = errno;
    g_init_term.store(1);
    ::kill(-1, SIGTERM);
    errno = saved;
}

[[noreturn]] void namespace_init(const ExecPlan& plan, int go_fd, int msg_fd, int status_fd) noexcept
{
    ::prctl(PR_SET_PDEATHSIG, SIGKILL);

    struct sigaction sa{};
    sa.sa_handler = init_forward_term;
    sigemptyset(&sa.sa_mask);
    ::sigaction(SIGTERM, &sa, nullptr);
    ::sigaction(SIGINT, &sa, nullptr);
    ::sigaction(SIGHUP, &sa, nullptr);
    sigset_t none;
    sigemptyset(&none);
    ::sigprocmask(SIG_SETMASK, &none, nullptr);

    char c = 0;
    ssize_t n;
    while ((n = ::read(go_fd, &c, 1)) < 0 && errno == EINTR)
    {
    }
    if (n != 1)
        ::_exit(126);
    ::close(go_fd);

    pid_t job = raw_clone(0);
    if (job == 0)
    {
        ::close(status_fd);
        exec_child(plan, -1, msg_fd);
    }
    ::close(msg_fd);
    if (job < 0)
    {
        int st = 127 << 8;
        [[maybe_unused]] auto w = ::write(status_fd, &st, sizeof st);
        ::_exit(127);
    }

    while (true)
    {
        int st = 0;
        pid_t p = static_cast<pid_t>(::syscall(SYS_wait4, -1, &st, 0, nullptr));
        if (p == job)
        {
            while (::write(status_fd, &st, sizeof st) < 0 && errno == EINTR)
            {
            }
        }
        else if (p < 0 && errno == ECHILD)
        {
            ::_exit(0);
        }
    }
}

std::string find_executable(const std::string& name, const EnvMap& env)
{
    if (name.find('/') != std::string::npos)
        return name;
    auto it = env.find("PATH");
    std::string path_var = it != env.end() ? it->second : "/usr/local/bin:/usr/bin:/bin";
    std::size_t start = 0;
    while (start <= path_var.size())
    {
        auto colon = path_var.find(':', start);
        std::string dir = path_var.substr(start, colon == std::string::npos ? std::string::npos : colon - start);
        if (dir.empty())
            dir = ".";
        std::string candidate = dir + "/" + name;
        if (::access(candidate.c_str(), X_OK) == 0)
            return candidate;
        if (colon == std::string::npos)
            break;
        start = colon + 1;
    }
    return name;
}

const char* stage_name(int kind)
{
    switch (kind)
    {
        case FailSignals: return "signal setup";
        case FailRlimit: return "setrlimit";
        case FailAffinity: return "sched_setaffinity";
        case FailChdir: return "chdir";
        case FailExec: return "exec";
        default: return "launch";
    }
}

struct Pipe
{
    int rd = -1;
    int wr = -1;

    explicit Pipe(int flags)
    {
        int fds[2];
        if (::pipe2(fds, flags) != 0)
            throw_errno(ErrorKind::Spawn, "pipe2");
        rd = fds[0];
        wr = fds[1];
    }
    ~Pipe()
    {
        close_rd();
        close_wr();
    }
    Pipe(const Pipe&) = delete;
    Pipe& operator=(const Pipe&) = delete;

    void close_rd()
    {
        if (rd >= 0)
            ::close(rd);
        rd = -1;
    }
    void close_wr()
    {
        if (wr >= 0)
            ::close(wr);
        wr = -1;
    }
};

std::atomic<int> g_jail_counter{0};

std::optional<std::uint64_t> read_ns_inode(pid_t pid)
{
    struct stat st{};
    auto link = fmt::format("/proc/{}/ns/pid", pid);
    if (::stat(link.c_str(), &st) != 0)
        return std::nullopt;
    return static_cast<std::uint64_t>(st.st_ino);
}

bool probe_pid_namespace()
{
    pid_t child = raw_clone(CLONE_NEWPID);
    if (child == 0)
        ::_exit(0);
    if (child < 0)
        return false;
    int st = 0;
    while (::waitpid(child, &st, 0) < 0 && errno == EINTR)
    {
    }
    return true;
}

bool signal_pid(pid_t pid, Signal sig)
{
    return ::kill(pid, sig == Signal::Term ? SIGTERM : SIGKILL) == 0;
}

} // namespace

bool backend_supported(IsolationBackend backend)
{
    switch (backend)
    {
        case IsolationBackend::ProcessGroup: return true;
        case IsolationBackend::Subreaper: {
            int v = 0;
            return ::prctl(PR_GET_CHILD_SUBREAPER, &v, 0, 0, 0) == 0;
        }
        case IsolationBackend::PidNamespace: {
            static const bool supported = probe_pid_namespace();
            return supported;
        }
    }
    return false;
}

IsolationBackend default_backend()
{
    for (auto b : {IsolationBackend::PidNamespace, IsolationBackend::Subreaper})
        if (backend_supported(b))
            return b;
    return IsolationBackend::ProcessGroup;
}

// ---------------------------------------------------------------------------
// Jail

struct Jail::State
{
    JailHandle handle;
    bool spawned = false;
    bool terminated = false;
    std::optional<int> job_status;
    bool init_reaped = false;
    int status_fd = -1;
    std::optional<int> previous_subreaper;
    std::recursive_mutex mu;

    ~State()
    {
        if (status_fd >= 0)
            ::close(status_fd);
        if (previous_subreaper)
            ::prctl(PR_SET_CHILD_SUBREAPER, *previous_subreaper, 0, 0, 0);
    }
};

Jail::Jail(std::unique_ptr<State> state) : state_(std::move(state)) {}
Jail::Jail(Jail&&) noexcept = default;
Jail& Jail::operator=(Jail&&) noexcept = default;

Jail::~Jail()
{
    if (!state_ || !state_->spawned || state_->terminated)
        return;
    try
    {
        ProcfsInspector inspector;
        terminate(inspector, Millis(0));
    }
    catch (...)
    {
    }
}

Jail Jail::create(IsolationBackend backend)
{
    if (!backend_supported(backend))
        throw Error(ErrorKind::BackendUnsupported,
                    fmt::format("isolation backend {} is not available on this host", to_string(backend)));

    auto state = std::make_unique<State>();
    auto& h = state->handle;
    h.backend = backend;
    h.supervisor_pid = ::getpid();
    h.jail_id = fmt::format("{}-{}", h.supervisor_pid, ++g_jail_counter);
    h.created_at = Clock::now();
    h.created_ticks = boot_ticks_now();

    if (backend == IsolationBackend::Subreaper)
    {
        int old = 0;
        if (::prctl(PR_GET_CHILD_SUBREAPER, &old, 0, 0, 0) != 0)
            throw_errno(ErrorKind::BackendUnsupported, "PR_GET_CHILD_SUBREAPER");
        if (::prctl(PR_SET_CHILD_SUBREAPER, 1, 0, 0, 0) != 0)
            throw_errno(ErrorKind::BackendUnsupported, "PR_SET_CHILD_SUBREAPER");
        state->previous_subreaper = old;
    }
    return Jail(std::move(state));
}

const JailHandle& Jail::handle() const
{
    return state_->handle;
}

bool Jail::spawned() const
{
    return state_->spawned;
}

pid_t Jail::spawn(const std::vector<std::string>& command, const EnvMap& env_overlay, const PreExecHooks& hooks,
                  const fs::path& workdir)
{
    std::lock_guard lock(state_->mu);
    auto& st = *state_;
    if (command.empty())
        throw Error(ErrorKind::InvalidArgument, "empty command");
    if (st.spawned)
        throw Error(ErrorKind::InvalidArgument, "jail already has a job");
    if (st.terminated)
        throw Error(ErrorKind::InvalidArgument, "jail already terminated");

    EnvMap env = merge_env({current_environment(), env_overlay});
    ExecPlan plan;
    plan.path = find_executable(command.front(), env);
    plan.argv_storage = command;
    plan.envp_storage = to_envp(env);
    for (auto& a : plan.argv_storage)
        plan.argv.push_back(a.data());
    plan.argv.push_back(nullptr);
    for (auto& e : plan.envp_storage)
        plan.envp.push_back(e.data());
    plan.envp.push_back(nullptr);
    if (hooks.data_limit)
        plan.data_limit = rlimit{*hooks.data_limit, *hooks.data_limit};
    if (hooks.rss_limit)
        plan.rss_limit = rlimit{*hooks.rss_limit, *hooks.rss_limit};
    if (hooks.cpus)
    {
        cpu_set_t set;
        CPU_ZERO(&set);
        for (int c : *hooks.cpus)
        {
            if (c < 0 || c >= CPU_SETSIZE)
                throw Error(ErrorKind::InvalidArgument, fmt::format("cpu id {} out of range", c));
            CPU_SET(c, &set);
        }
        plan.cpus = set;
    }
    plan.workdir = workdir.string();
    plan.report_host_pid = st.handle.backend == IsolationBackend::PidNamespace;

    Pipe go(O_CLOEXEC);
    Pipe msg(O_CLOEXEC);
    auto& h = st.handle;

    pid_t child = -1;
    if (h.backend == IsolationBackend::PidNamespace)
    {
        Pipe status(O_CLOEXEC);
        child = raw_clone(CLONE_NEWPID);
        if (child == 0)
        {
            ::close(go.wr);
            ::close(msg.rd);
            ::close(status.rd);
            namespace_init(plan, go.rd, msg.wr, status.wr);
        }
        if (child < 0)
            throw_errno(ErrorKind::Spawn, "clone(CLONE_NEWPID)");
        status.close_wr();
        ::fcntl(status.rd, F_SETFL, O_NONBLOCK);
        st.status_fd = status.rd;
        status.rd = -1;
        h.init_pid = child;
        h.ns_token = read_ns_inode(child);
    }
    else
    {
        child = ::fork();
        if (child == 0)
        {
            ::close(go.wr);
            ::close(msg.rd);
            exec_child(plan, go.rd, msg.wr);
        }
        if (child < 0)
            throw_errno(ErrorKind::Spawn, "fork");
        ::setpgid(child, child);
        h.root_pid = child;
        h.pgid = child;
    }
    go.close_rd();
    msg.close_wr();
    st.spawned = true;

    try
    {
        for (const auto& attach : hooks.attach)
            attach(child);
    }
    catch (...)
    {
        go.close_wr();
        ::kill(child, SIGKILL);
        int ws = 0;
        ::waitpid(child, &ws, 0);
        st.terminated = true;
        throw;
    }

    char c = 'g';
    if (::write(go.wr, &c, 1) != 1)
        throw_errno(ErrorKind::Spawn, "release child");
    go.close_wr();

    std::optional<ChildMsg> failure;
    while (true)
    {
        ChildMsg m{};
        ssize_t n = ::read(msg.rd, &m, sizeof m);
        if (n < 0 && errno == EINTR)
            continue;
        if (n != static_cast<ssize_t>(sizeof m))
            break;
        if (m.kind == HostPid)
        {
            h.root_pid = m.value;
            h.pgid = m.value;
        }
        else
        {
            failure = m;
        }
    }

    if (failure)
    {
        // The jail stays valid and terminable; the job simply never ran.
        throw Error(ErrorKind::Spawn, fmt::format("{} {}: {}", stage_name(failure->kind), plan.path,
                                                  std::strerror(failure->value)));
    }
    if (h.root_pid <= 1)
        throw Error(ErrorKind::Spawn, "could not determine job pid");
    return h.root_pid;
}

std::optional<int> Jail::poll_job_status()
{
    std::lock_guard lock(state_->mu);
    auto& st = *state_;
    if (st.job_status || !st.spawned)
        return st.job_status;
    const auto& h = st.handle;

    if (h.backend != IsolationBackend::PidNamespace)
    {
        int ws = 0;
        pid_t r = ::waitpid(h.root_pid, &ws, WNOHANG);
        if (r == h.root_pid)
            st.job_status = ws;
        else if (r < 0 && errno == ECHILD)
            st.job_status = SIGKILL; // already reaped elsewhere
        return st.job_status;
    }

    auto read_status = [&]() {
        int ws = 0;
        ssize_t n = ::read(st.status_fd, &ws, sizeof ws);
        if (n == static_cast<ssize_t>(sizeof ws))
            st.job_status = ws;
    };
    read_status();
    if (!st.job_status && !st.init_reaped)
    {
        int ws = 0;
        if (::waitpid(h.init_pid, &ws, WNOHANG) == h.init_pid)
        {
            st.init_reaped = true;
            read_status();
            if (!st.job_status)
                st.job_status = SIGKILL; // namespace torn down before the job reported
        }
    }
    return st.job_status;
}

void Jail::reap()
{
    std::lock_guard lock(state_->mu);
    poll_job_status();
    auto& st = *state_;
    const auto& h = st.handle;
    if (h.backend == IsolationBackend::PidNamespace && !st.init_reaped && h.init_pid > 0)
    {
        int ws = 0;
        if (::waitpid(h.init_pid, &ws, WNOHANG) == h.init_pid)
        {
            st.init_reaped = true;
            poll_job_status();
        }
    }
    if (h.backend == IsolationBackend::Subreaper)
    {
        // Orphans re-parented to us; only reap the jail's own.
        ProcfsInspector inspector;
        auto table = members(inspector, h);
        for (const auto& r : table.records())
        {
            if (r.is_zombie() && r.ppid == h.supervisor_pid && r.pid != h.root_pid)
            {
                int ws = 0;
                ::waitpid(r.pid, &ws, WNOHANG);
            }
        }
    }
}

TerminationReport Jail::terminate(ProcessInspector& inspector, Millis grace, std::span<const ProcessRecord> extra)
{
    std::lock_guard lock(state_->mu);
    auto& st = *state_;
    const auto& h = st.handle;
    TerminationReport report;
    auto start = Clock::now();
    if (!st.spawned)
    {
        st.terminated = true;
        return report;
    }

    std::vector<ProcessRecord> extra_targets(extra.begin(), extra.end());
    auto alive = [&]() {
        reap();
        auto host = inspector.read_table();
        std::vector<ProcessRecord> out;
        auto current = members_of(host, h);
        for (const auto& r : current.records())
            if (!r.is_zombie())
                out.push_back(r);
        for (const auto& e : extra_targets)
        {
            const auto* r = host.find(e.pid);
            if (r && r->same_process(e) && !r->is_zombie() &&
                std::none_of(out.begin(), out.end(), [&](const auto& o) { return o.pid == r->pid; }))
                out.push_back(*r);
        }
        return out;
    };
    bool group_signal = h.backend != IsolationBackend::PidNamespace;
    bool init_alive = h.backend == IsolationBackend::PidNamespace && !st.init_reaped;

    auto deliver = [&](const std::vector<ProcessRecord>& targets, Signal sig) {
        if (group_signal && std::any_of(targets.begin(), targets.end(), [&](const auto& r) { return r.pgid == h.pgid; }))
            report.steps.push_back({-h.pgid, sig, signal_pid(-h.pgid, sig)});
        if (h.backend == IsolationBackend::PidNamespace && !st.init_reaped)
            report.steps.push_back({h.init_pid, sig, signal_pid(h.init_pid, sig)});
        for (const auto& r : targets)
        {
            if (group_signal && r.pgid == h.pgid)
                continue;
            report.steps.push_back({r.pid, sig, signal_pid(r.pid, sig)});
        }
    };
    auto wait_until_empty = [&](Clock::time_point deadline) {
        auto targets = alive();
        while (!targets.empty() && Clock::now() < deadline)
        {
            std::this_thread::sleep_for(Millis(20));
            targets = alive();
        }
        return targets;
    };

    auto targets = alive();
    if (!targets.empty() || init_alive)
    {
        deliver(targets, Signal::Term);
        targets = wait_until_empty(start + grace);
    }
    if (!targets.empty())
    {
        deliver(targets, Signal::Kill);
        report.escalated = true;
        targets = wait_until_empty(Clock::now() + settle_window);
    }

    if (h.backend == IsolationBackend::PidNamespace && !st.init_reaped && h.init_pid > 0)
    {
        // The namespace is empty or being torn down; init must follow.
        auto deadline = Clock::now() + settle_window;
        while (!st.init_reaped && Clock::now() < deadline)
        {
            reap();
            if (!st.init_reaped)
                std::this_thread::sleep_for(Millis(10));
        }
        if (!st.init_reaped)
        {
            report.steps.push_back({h.init_pid, Signal::Kill, signal_pid(h.init_pid, Signal::Kill)});
            report.escalated = true;
            int ws = 0;
            if (::waitpid(h.init_pid, &ws, 0) == h.init_pid)
                st.init_reaped = true;
            poll_job_status();
        }
    }
    if (h.backend != IsolationBackend::PidNamespace && !st.job_status)
    {
        auto deadline = Clock::now() + settle_window;
        while (!poll_job_status() && Clock::now() < deadline)
            std::this_thread::sleep_for(Millis(10));
    }

    for (const auto& r : targets)
        report.survivors.push_back(r.pid);
    report.elapsed = std::chrono::duration_cast<Millis>(Clock::now() - start);
    st.terminated = true;
    return report;
}

} // namespace jobjail

#include "sifu/sandbox.hpp"

#include <fcntl.h>
#include <linux/audit.h>
#include <linux/capability.h>
#include <linux/filter.h>
#include <linux/seccomp.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <spdlog/spdlog.h>
#include <sys/mman.h>
#include <sys/mount.h>
#include <sys/prctl.h>
#include <sys/resource.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <sys/statvfs.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <vector>

#include "sifu/error.hpp"
#include "sifu/workspace.hpp"

namespace fs = std::filesystem;

namespace sifu {

std::string ExitStatus::describe() const {
  switch (kind) {
    case Kind::Exited: return "exited with code " + std::to_string(code);
    case Kind::Signaled: return std::string("terminated by signal ") + std::to_string(code) + " (" + ::strsignal(code) + ")";
    case Kind::Killed:
      switch (reason) {
        case KillReason::TimeLimit: return "killed: time limit exceeded";
        case KillReason::MemoryLimit: return "killed: memory limit exceeded";
        case KillReason::ForbiddenOperation: return "killed: forbidden operation";
      }
  }
  return "unknown";
}

namespace {

// ---------------------------------------------------------------------------
// file descriptors

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) { reset(); fd_ = std::exchange(o.fd_, -1); }
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct Pipe {
  Fd read, write;
};

Pipe make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw InfrastructureError(std::string("pipe2: ") + std::strerror(errno));
  return {Fd(fds[0]), Fd(fds[1])};
}

// ---------------------------------------------------------------------------
// cgroups

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool write_file(const fs::path& p, const std::string& value) {
  const int fd = ::open(p.c_str(), O_WRONLY | O_CLOEXEC);
  if (fd < 0) return false;
  const bool ok = ::write(fd, value.data(), value.size()) == static_cast<ssize_t>(value.size());
  ::close(fd);
  return ok;
}

std::uint64_t read_counter(const fs::path& file, const std::string& key) {
  std::istringstream in(slurp(file));
  std::string k;
  std::uint64_t v = 0;
  while (in >> k >> v)
    if (k == key) return v;
  return 0;
}

struct CgroupLayout {
  enum class Version { None, V1, V2 } version = Version::None;
  fs::path memory_root, pids_root;  // v1: per-controller hierarchies; v2: same dir
  bool memory = false, pids = false;
};

CgroupLayout detect_cgroups() {
  CgroupLayout l;
  std::error_code ec;
  if (fs::exists("/sys/fs/cgroup/cgroup.controllers", ec)) {
    const auto controllers = slurp("/sys/fs/cgroup/cgroup.controllers");
    const fs::path base = "/sys/fs/cgroup/sifu";
    fs::create_directories(base, ec);
    if (ec) return l;
    write_file("/sys/fs/cgroup/cgroup.subtree_control", "+memory +pids");
    write_file(base / "cgroup.subtree_control", "+memory +pids");
    const auto enabled = slurp(base / "cgroup.subtree_control");
    l.version = CgroupLayout::Version::V2;
    l.memory_root = l.pids_root = base;
    l.memory = enabled.find("memory") != std::string::npos;
    l.pids = enabled.find("pids") != std::string::npos;
    return l;
  }
  auto try_v1 = [&](const char* controller, fs::path& root) {
    const fs::path base = fs::path("/sys/fs/cgroup") / controller;
    if (!fs::exists(base / "cgroup.procs", ec)) return false;
    fs::create_directories(base / "sifu", ec);
    if (ec || ::access((base / "sifu").c_str(), W_OK) != 0) return false;
    root = base / "sifu";
    return true;
  };
  l.memory = try_v1("memory", l.memory_root);
  l.pids = try_v1("pids", l.pids_root);
  if (l.memory || l.pids) l.version = CgroupLayout::Version::V1;
  return l;
}

const CgroupLayout& cgroups() {
  static const CgroupLayout layout = detect_cgroups();
  return layout;
}

/// Per-run cgroup(s); removed on destruction.
class CgroupSlot {
 public:
  CgroupSlot(const SandboxPolicy& policy) {
    const auto& l = cgroups();
    if (l.version == CgroupLayout::Version::None) return;
    static std::atomic<std::uint64_t> counter{0};
    const auto name = "run-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
    std::error_code ec;
    if (l.version == CgroupLayout::Version::V2) {
      const auto dir = l.memory_root / name;
      if (!fs::create_directory(dir, ec)) return;
      dirs_.push_back(dir);
      if (l.memory && policy.memory_limit > 0) {
        memory_dir_ = dir;
        write_file(dir / "memory.max", std::to_string(policy.memory_limit));
        write_file(dir / "memory.swap.max", "0");
      }
      if (l.pids && policy.process_limit > 0) write_file(dir / "pids.max", std::to_string(policy.process_limit));
      return;
    }
    if (l.memory && policy.memory_limit > 0) {
      const auto dir = l.memory_root / name;
      if (fs::create_directory(dir, ec)) {
        dirs_.push_back(dir);
        memory_dir_ = dir;
        write_file(dir / "memory.limit_in_bytes", std::to_string(policy.memory_limit));
        write_file(dir / "memory.memsw.limit_in_bytes", std::to_string(policy.memory_limit));
      }
    }
    if (l.pids && policy.process_limit > 0) {
      const auto dir = l.pids_root / name;
      if (fs::create_directory(dir, ec)) {
        dirs_.push_back(dir);
        write_file(dir / "pids.max", std::to_string(policy.process_limit));
      }
    }
  }
  CgroupSlot(const CgroupSlot&) = delete;
  CgroupSlot& operator=(const CgroupSlot&) = delete;

  ~CgroupSlot() {
    for (const auto& d : dirs_) {
      // Tasks of a killed namespace may need a moment to leave.
      for (int i = 0; i < 200; ++i) {
        kill_all(d);
        if (::rmdir(d.c_str()) == 0 || errno != EBUSY) break;
        ::usleep(5000);
      }
    }
  }

  void attach(pid_t pid) const {
    for (const auto& d : dirs_) write_file(d / "cgroup.procs", std::to_string(pid));
  }

  void kill_members() const {
    for (const auto& d : dirs_) kill_all(d);
  }

  bool oom_killed() const {
    if (memory_dir_.empty()) return false;
    if (cgroups().version == CgroupLayout::Version::V2)
      return read_counter(memory_dir_ / "memory.events", "oom_kill") > 0;
    if (read_counter(memory_dir_ / "memory.oom_control", "oom_kill") > 0) return true;
    return std::stoull("0" + slurp(memory_dir_ / "memory.failcnt")) > 0;
  }

 private:
  static void kill_all(const fs::path& dir) {
    std::istringstream in(slurp(dir / "cgroup.procs"));
    pid_t p;
    while (in >> p) ::kill(p, SIGKILL);
  }

  std::vector<fs::path> dirs_;
  fs::path memory_dir_;
};

// ---------------------------------------------------------------------------
// seccomp

struct FilterBuilder {
  std::vector<sock_filter> prog;

  void stmt(std::uint16_t code, std::uint32_t k) { prog.push_back(BPF_STMT(code, k)); }
  void jump(std::uint16_t code, std::uint32_t k, std::uint8_t jt, std::uint8_t jf) {
    prog.push_back(BPF_JUMP(code, k, jt, jf));
  }
  void load_nr() { stmt(BPF_LD | BPF_W | BPF_ABS, offsetof(seccomp_data, nr)); }
  void on_syscall(long nr, std::uint32_t action) {
    jump(BPF_JMP | BPF_JEQ | BPF_K, static_cast<std::uint32_t>(nr), 0, 1);
    stmt(BPF_RET | BPF_K, action);
  }
};

std::vector<sock_filter> build_filter(const SandboxPolicy& policy) {
#if defined(__x86_64__)
  constexpr std::uint32_t kArch = AUDIT_ARCH_X86_64;
#elif defined(__aarch64__)
  constexpr std::uint32_t kArch = AUDIT_ARCH_AARCH64;
#else
#error "unsupported architecture for the sandbox syscall filter"
#endif
  constexpr std::uint32_t kKill = SECCOMP_RET_KILL_PROCESS;
  constexpr std::uint32_t kDeny = SECCOMP_RET_ERRNO | (EPERM & SECCOMP_RET_DATA);

  FilterBuilder f;
  f.stmt(BPF_LD | BPF_W | BPF_ABS, offsetof(seccomp_data, arch));
  f.jump(BPF_JMP | BPF_JEQ | BPF_K, kArch, 1, 0);
  f.stmt(BPF_RET | BPF_K, kKill);
  f.load_nr();
#if defined(__x86_64__)
  f.jump(BPF_JMP | BPF_JGE | BPF_K, 0x40000000u, 0, 1);  // x32 ABI
  f.stmt(BPF_RET | BPF_K, kKill);
#endif

  for (long nr : {SYS_mount, SYS_umount2, SYS_pivot_root, SYS_unshare, SYS_setns, SYS_kexec_load,
                  SYS_init_module, SYS_finit_module, SYS_delete_module, SYS_bpf, SYS_reboot, SYS_swapon,
                  SYS_swapoff, SYS_io_uring_setup, SYS_keyctl, SYS_add_key, SYS_request_key})
    f.on_syscall(nr, kDeny);

  if (policy.debug_forbidden) {
    for (long nr : {SYS_ptrace, SYS_process_vm_readv, SYS_process_vm_writev, SYS_perf_event_open})
      f.on_syscall(nr, kDeny);
  }

  if (policy.network_forbidden) {
    // socket(AF_INET | AF_INET6 | AF_PACKET, ...) kills the process.
    f.jump(BPF_JMP | BPF_JEQ | BPF_K, SYS_socket, 0, 5);
    f.stmt(BPF_LD | BPF_W | BPF_ABS, offsetof(seccomp_data, args[0]));
    f.jump(BPF_JMP | BPF_JEQ | BPF_K, AF_INET, 2, 0);
    f.jump(BPF_JMP | BPF_JEQ | BPF_K, AF_INET6, 1, 0);
    f.jump(BPF_JMP | BPF_JEQ | BPF_K, AF_PACKET, 0, 1);
    f.stmt(BPF_RET | BPF_K, kKill);
  }
  f.stmt(BPF_RET | BPF_K, SECCOMP_RET_ALLOW);
  return f.prog;
}

// ---------------------------------------------------------------------------
// mounts

struct MountPoint {
  std::string path;
  unsigned long flags;
};

std::string unescape_mount(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 3 < s.size()) {
      out.push_back(static_cast<char>(std::stoi(s.substr(i + 1, 3), nullptr, 8)));
      i += 3;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

bool under(const std::string& path, const std::string& dir) {
  return path == dir || path.starts_with(dir + "/");
}

std::vector<MountPoint> mounts_to_protect() {
  std::vector<MountPoint> out;
  std::istringstream in(slurp("/proc/self/mountinfo"));
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string id, parent, devno, root, mp;
    fields >> id >> parent >> devno >> root >> mp;
    mp = unescape_mount(mp);
    if (under(mp, "/proc") || under(mp, "/dev")) continue;
    struct statvfs st {};
    unsigned long flags = MS_BIND | MS_REMOUNT | MS_RDONLY;
    if (::statvfs(mp.c_str(), &st) == 0) {
      if (st.f_flag & ST_NOSUID) flags |= MS_NOSUID;
      if (st.f_flag & ST_NODEV) flags |= MS_NODEV;
      if (st.f_flag & ST_NOEXEC) flags |= MS_NOEXEC;
      if (st.f_flag & ST_NOATIME) flags |= MS_NOATIME;
      if (st.f_flag & ST_NODIRATIME) flags |= MS_NODIRATIME;
      if (st.f_flag & ST_RELATIME) flags |= MS_RELATIME;
    }
    out.push_back({mp, flags});
  }
  return out;
}

std::atomic<int> g_namespaces{-1};  // -1 unknown, 0 unavailable, 1 available

// ---------------------------------------------------------------------------
// child side: only raw syscalls from here until execve

struct ChildPlan {
  const char* program;
  char* const* argv;
  char* const* envp;
  const char* workdir;
  std::vector<const char*> writable;  // absolute paths bound read-write
  bool bind_whole_workspace;
  const std::vector<MountPoint>* protect;
  bool isolate_mounts;
  sock_fprog filter;
  rlim_t cpu_seconds;
  int stdin_fd, stdout_fd, stderr_fd, status_fd, error_fd, sync_fd;
};

[[noreturn]] void child_fail(int error_fd, const char* what) {
  const int e = errno;
  (void)!::write(error_fd, what, std::strlen(what));
  (void)!::write(error_fd, ": ", 2);
  const char* msg = ::strerror(e);
  (void)!::write(error_fd, msg, std::strlen(msg));
  ::_exit(125);
}

void set_limit(int resource, rlim_t value) {
  rlimit rl{value, value};
  ::setrlimit(resource, &rl);
}

[[noreturn]] void exec_command(const ChildPlan& p) {
  ::close_range(3, ~0u, 0);
  if (::chdir(p.workdir) != 0) {
    (void)!::write(2, "sandbox: chdir failed\n", 22);
    ::_exit(127);
  }
  set_limit(RLIMIT_CORE, 0);
  set_limit(RLIMIT_CPU, p.cpu_seconds);
  set_limit(RLIMIT_FSIZE, 64ull << 20);
  set_limit(RLIMIT_NOFILE, 256);

  // Drop every capability; uid 0 without capabilities owns only the workspace.
  for (int cap = 0; cap <= 63; ++cap) ::prctl(PR_CAPBSET_DROP, cap, 0, 0, 0);
  __user_cap_header_struct hdr{_LINUX_CAPABILITY_VERSION_3, 0};
  __user_cap_data_struct data[2]{};
  ::syscall(SYS_capset, &hdr, data);

  ::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0);
  ::prctl(PR_SET_DUMPABLE, 0, 0, 0, 0);
  if (::prctl(PR_SET_SECCOMP, SECCOMP_MODE_FILTER, &p.filter, 0, 0) != 0) {
    (void)!::write(2, "sandbox: seccomp unavailable\n", 29);
    ::_exit(126);
  }
  ::execve(p.program, p.argv, p.envp);
  const char* msg = ::strerror(errno);
  (void)!::write(2, "sandbox: cannot execute ", 24);
  (void)!::write(2, p.program, std::strlen(p.program));
  (void)!::write(2, ": ", 2);
  (void)!::write(2, msg, std::strlen(msg));
  (void)!::write(2, "\n", 1);
  ::_exit(127);
}

[[noreturn]] void child_main(const ChildPlan& p) {
  char go = 0;
  if (::read(p.sync_fd, &go, 1) != 1) ::_exit(125);
  ::setpgid(0, 0);
  ::signal(SIGPIPE, SIG_DFL);

  if (p.isolate_mounts) {
    if (::mount(nullptr, "/", nullptr, MS_REC | MS_PRIVATE, nullptr) != 0) child_fail(p.error_fd, "make-private /");
    if (::mount(p.workdir, p.workdir, nullptr, MS_BIND | MS_REC, nullptr) != 0)
      child_fail(p.error_fd, "bind workspace");
    for (const char* w : p.writable)
      if (::mount(w, w, nullptr, MS_BIND, nullptr) != 0) child_fail(p.error_fd, "bind writable path");
    for (const auto& m : *p.protect) {
      if (::mount(nullptr, m.path.c_str(), nullptr, m.flags, nullptr) != 0 && m.path == "/")
        child_fail(p.error_fd, "remount / read-only");
    }
    if (!p.bind_whole_workspace &&
        ::mount(nullptr, p.workdir, nullptr, MS_BIND | MS_REMOUNT | MS_RDONLY, nullptr) != 0)
      child_fail(p.error_fd, "remount workspace read-only");
    ::mount("proc", "/proc", "proc", MS_NOSUID | MS_NODEV | MS_NOEXEC, nullptr);
    ::mount("tmpfs", "/dev/shm", "tmpfs", MS_NOSUID | MS_NODEV, "size=16m");
  }

  // Keep the std streams for the command, everything else at fixed slots.
  int fds[] = {p.stdin_fd, p.stdout_fd, p.stderr_fd, p.status_fd};
  for (int& fd : fds) fd = ::fcntl(fd, F_DUPFD_CLOEXEC, 100);
  ::dup2(fds[0], 0);
  ::dup2(fds[1], 1);
  ::dup2(fds[2], 2);
  ::dup2(fds[3], 3);
  ::close_range(4, ~0u, 0);

  const pid_t cmd = static_cast<pid_t>(::syscall(SYS_clone, SIGCHLD, 0, 0, 0, 0));
  if (cmd < 0) ::_exit(125);
  if (cmd == 0) exec_command(p);

  ::close(0);
  ::close(1);
  ::close(2);
  int status = 0;
  for (;;) {
    const pid_t r = ::waitpid(-1, &status, 0);
    if (r == cmd) break;
    if (r < 0 && errno != EINTR) ::_exit(125);
  }
  (void)!::write(3, &status, sizeof status);
  ::_exit(0);
}

// ---------------------------------------------------------------------------
// parent side

std::string resolve_program(const std::string& name, const std::string& path_env) {
  if (name.find('/') != std::string::npos) return name;
  std::istringstream dirs(path_env);
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    if (dir.empty()) continue;
    const auto candidate = dir + "/" + name;
    if (::access(candidate.c_str(), X_OK) == 0) return candidate;
  }
  return name;
}

struct CStrings {
  std::vector<std::string> storage;
  std::vector<char*> ptrs;
  explicit CStrings(std::vector<std::string> v) : storage(std::move(v)) {
    for (auto& s : storage) ptrs.push_back(s.data());
    ptrs.push_back(nullptr);
  }
};

Fd make_stdin(const std::optional<std::string>& data) {
  if (!data) {
    Fd fd(::open("/dev/null", O_RDONLY | O_CLOEXEC));
    if (!fd) throw InfrastructureError("cannot open /dev/null");
    return fd;
  }
  Fd fd(static_cast<int>(::syscall(SYS_memfd_create, "sifu-stdin", MFD_CLOEXEC)));
  if (!fd) throw InfrastructureError(std::string("memfd_create: ") + std::strerror(errno));
  std::size_t off = 0;
  while (off < data->size()) {
    const auto n = ::write(fd.get(), data->data() + off, data->size() - off);
    if (n <= 0) throw InfrastructureError("cannot fill stdin buffer");
    off += static_cast<std::size_t>(n);
  }
  ::lseek(fd.get(), 0, SEEK_SET);
  return fd;
}

pid_t spawn(ChildPlan& plan, bool try_namespaces) {
  if (try_namespaces) {
    const unsigned long flags = CLONE_NEWPID | CLONE_NEWNS | CLONE_NEWNET | CLONE_NEWIPC | CLONE_NEWUTS | SIGCHLD;
    plan.isolate_mounts = true;
    const pid_t pid = static_cast<pid_t>(::syscall(SYS_clone, flags, 0, 0, 0, 0));
    if (pid == 0) child_main(plan);
    if (pid > 0) {
      g_namespaces.store(1);
      return pid;
    }
    if (errno != EPERM && errno != EINVAL && errno != ENOSPC && errno != EUSERS)
      throw InfrastructureError(std::string("clone: ") + std::strerror(errno));
    if (g_namespaces.exchange(0) != 0)
      spdlog::warn("sandbox: namespaces unavailable ({}); relying on the syscall filter only", std::strerror(errno));
  }
  plan.isolate_mounts = false;
  const pid_t pid = static_cast<pid_t>(::syscall(SYS_clone, SIGCHLD, 0, 0, 0, 0));
  if (pid == 0) child_main(plan);
  if (pid < 0) throw InfrastructureError(std::string("fork: ") + std::strerror(errno));
  return pid;
}

}  // namespace

SandboxCapabilities sandbox_capabilities() {
  const auto& l = cgroups();
  return {g_namespaces.load() != 0, l.memory, l.pids};
}

ExecutionOutcome run_sandboxed(const CommandSpec& cmd, const fs::path& root_in, const SandboxPolicy& policy,
                               const RunOptions& options) {
  if (cmd.argv.empty()) throw InfrastructureError("empty command");
  double limit = options.wall_clock_limit.value_or(cmd.timeout_s.value_or(policy.wall_clock_limit));
  if (!(limit > 0)) throw InfrastructureError("non-positive wall clock limit");
  const fs::path root = fs::absolute(root_in).lexically_normal();
  const std::string workdir = root.string();

  // Environment: defaults < allow-listed host values < command < run options.
  std::map<std::string, std::string> env = {
      {"PATH", "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin"},
      {"HOME", workdir},
      {"TMPDIR", workdir + "/.tmp"},
      {"LANG", "C.UTF-8"},
  };
  for (const auto& name : cmd.env_allow)
    if (const char* v = std::getenv(name.c_str())) env[name] = v;
  for (const auto& [k, v] : cmd.env) env[k] = v;
  for (const auto& [k, v] : options.extra_env) env[k] = v;
  std::error_code ec;
  fs::create_directories(root / ".tmp", ec);

  std::vector<std::string> env_strings;
  for (const auto& [k, v] : env) env_strings.push_back(k + "=" + v);
  CStrings argv(cmd.argv);
  CStrings envp(std::move(env_strings));
  const std::string program = resolve_program(cmd.argv.front(), env["PATH"]);

  std::vector<std::string> writable;
  for (const auto& w : policy.writable_paths) {
    if (!is_safe_relative_path(w)) throw InfrastructureError("writable path '" + w + "' leaves the workspace");
    fs::create_directories(root / w, ec);
    writable.push_back((root / w).string());
  }
  if (!policy.writable_paths.empty()) writable.push_back(workdir + "/.tmp");

  static std::once_flag protect_once;
  static std::vector<MountPoint> protect;
  std::call_once(protect_once, [] { protect = mounts_to_protect(); });

  auto filter = build_filter(policy);
  auto out = make_pipe();
  auto err = make_pipe();
  auto status = make_pipe();
  auto errors = make_pipe();
  auto sync = make_pipe();
  auto in = make_stdin(options.stdin_data);
  CgroupSlot cgroup(policy);

  ChildPlan plan{};
  plan.program = program.c_str();
  plan.argv = argv.ptrs.data();
  plan.envp = envp.ptrs.data();
  plan.workdir = workdir.c_str();
  for (const auto& w : writable) plan.writable.push_back(w.c_str());
  plan.bind_whole_workspace = policy.writable_paths.empty();
  plan.protect = &protect;
  plan.filter = {static_cast<unsigned short>(filter.size()), filter.data()};
  plan.cpu_seconds = static_cast<rlim_t>(std::ceil(limit)) + 1;
  plan.stdin_fd = in.get();
  plan.stdout_fd = out.write.get();
  plan.stderr_fd = err.write.get();
  plan.status_fd = status.write.get();
  plan.error_fd = errors.write.get();
  plan.sync_fd = sync.read.get();

  const auto started = std::chrono::steady_clock::now();
  const pid_t child = spawn(plan, g_namespaces.load() != 0);
  out.write.reset();
  err.write.reset();
  status.write.reset();
  errors.write.reset();
  sync.read.reset();
  in.reset();

  cgroup.attach(child);
  if (::write(sync.write.get(), "g", 1) != 1) {
    ::kill(child, SIGKILL);
    ::waitpid(child, nullptr, 0);
    throw InfrastructureError("sandbox child vanished before start");
  }
  sync.write.reset();

  ExecutionOutcome outcome;
  std::string status_bytes, error_bytes;
  bool out_open = true, err_open = true, status_open = true, errors_open = true;
  bool reaped = false, timed_out = false;
  int shim_status = 0;
  const auto deadline = started + std::chrono::duration<double>(limit);
  std::optional<std::chrono::steady_clock::time_point> drain_until;

  auto drain = [&](Fd& fd, bool& open, std::string* sink) {
    char buf[8192];
    const auto n = ::read(fd.get(), buf, sizeof buf);
    if (n > 0) {
      if (sink && sink->size() < options.output_cap)
        sink->append(buf, std::min<std::size_t>(static_cast<std::size_t>(n), options.output_cap - sink->size()));
    } else if (n == 0 || (errno != EINTR && errno != EAGAIN)) {
      open = false;
    }
  };

  while (true) {
    const auto now = std::chrono::steady_clock::now();
    if (!reaped) {
      const pid_t r = ::waitpid(child, &shim_status, WNOHANG);
      if (r == child) {
        reaped = true;
        drain_until = now + std::chrono::milliseconds(200);
      }
    }
    if (!reaped && now >= deadline) {
      timed_out = true;
      ::kill(-child, SIGKILL);
      ::kill(child, SIGKILL);
      cgroup.kill_members();
      ::waitpid(child, &shim_status, 0);
      reaped = true;
      drain_until = std::chrono::steady_clock::now() + std::chrono::milliseconds(50);
    }
    const bool pipes_open = out_open || err_open || status_open || errors_open;
    if (reaped && (!pipes_open || std::chrono::steady_clock::now() >= *drain_until)) break;

    std::vector<pollfd> pfds;
    std::vector<std::pair<Fd*, std::pair<bool*, std::string*>>> targets;
    auto add = [&](Fd& fd, bool& open, std::string* sink) {
      if (!open) return;
      pfds.push_back({fd.get(), POLLIN, 0});
      targets.push_back({&fd, {&open, sink}});
    };
    add(out.read, out_open, &outcome.stdout_data);
    add(err.read, err_open, &outcome.stderr_data);
    add(status.read, status_open, &status_bytes);
    add(errors.read, errors_open, &error_bytes);
    auto wait = std::chrono::milliseconds(20);
    if (!reaped) {
      const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
      wait = std::clamp(remaining, std::chrono::milliseconds(1), std::chrono::milliseconds(20));
    }
    if (pfds.empty()) {
      ::usleep(static_cast<useconds_t>(wait.count() * 1000));
      continue;
    }
    const int n = ::poll(pfds.data(), pfds.size(), static_cast<int>(wait.count()));
    if (n < 0 && errno != EINTR) throw InfrastructureError(std::string("poll: ") + std::strerror(errno));
    for (std::size_t i = 0; n > 0 && i < pfds.size(); ++i) {
      if (pfds[i].revents & (POLLIN | POLLHUP | POLLERR))
        drain(*targets[i].first, *targets[i].second.first, targets[i].second.second);
    }
  }
  outcome.duration = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!reaped) ::waitpid(child, &shim_status, 0);

  if (!error_bytes.empty()) throw InfrastructureError("sandbox setup failed: " + error_bytes);

  if (timed_out) {
    outcome.exit_status = ExitStatus::killed(KillReason::TimeLimit);
    return outcome;
  }
  if (status_bytes.size() < sizeof(int)) {
    // The shim died without reporting; only an external kill gets here.
    if (cgroup.oom_killed()) outcome.exit_status = ExitStatus::killed(KillReason::MemoryLimit);
    else throw InfrastructureError("sandbox shim ended without a status (" + std::to_string(shim_status) + ")");
    return outcome;
  }
  int st = 0;
  std::memcpy(&st, status_bytes.data(), sizeof st);
  if (WIFEXITED(st)) {
    outcome.exit_status = ExitStatus::exited(WEXITSTATUS(st));
  } else if (WIFSIGNALED(st)) {
    const int sig = WTERMSIG(st);
    if (sig == SIGSYS) outcome.exit_status = ExitStatus::killed(KillReason::ForbiddenOperation);
    else if (sig == SIGXCPU) outcome.exit_status = ExitStatus::killed(KillReason::TimeLimit);
    else if (sig == SIGKILL && cgroup.oom_killed()) outcome.exit_status = ExitStatus::killed(KillReason::MemoryLimit);
    else outcome.exit_status = ExitStatus::signaled(sig);
  }
  return outcome;
}

ExecutionOutcome run_sandboxed(const CommandSpec& cmd, const Workspace& w, const SandboxPolicy& policy,
                               const RunOptions& options) {
  return run_sandboxed(cmd, w.root(), policy, options);
}

}  // namespace sifu

#include "emd/corpus/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "emd/error.hpp"
#include "emd/numerics/rng.hpp"

namespace emd::corpus {
namespace {

const std::vector<std::string>& windows_api_names() {
  static const std::vector<std::string> names{
      "NtCreateFile", "NtReadFile", "NtWriteFile", "NtClose", "NtQueryInformationFile",
      "NtSetInformationFile", "NtOpenKey", "NtQueryValueKey", "NtSetValueKey", "NtEnumerateKey",
      "NtOpenProcess", "NtAllocateVirtualMemory", "NtProtectVirtualMemory", "NtFreeVirtualMemory",
      "NtMapViewOfSection", "NtUnmapViewOfSection", "NtCreateSection", "NtQuerySystemInformation",
      "NtDelayExecution", "NtCreateThreadEx", "NtResumeThread", "NtTerminateProcess",
      "NtQueryAttributesFile", "NtDeviceIoControlFile", "NtOpenFile", "NtCreateMutant",
      "NtOpenSection", "NtQueryDirectoryFile", "NtCreateKey", "NtDeleteKey", "NtDeleteFile",
      "NtOpenThread", "NtGetContextThread", "NtSetContextThread", "NtSuspendThread",
      "NtWriteVirtualMemory", "NtReadVirtualMemory", "NtQueueApcThread", "NtLoadDriver",
      "LdrLoadDll", "LdrGetProcedureAddress", "LdrGetDllHandle", "LdrUnloadDll",
      "CreateProcessInternalW", "CreateRemoteThread", "CreateToolhelp32Snapshot", "Process32FirstW",
      "Process32NextW", "Module32FirstW", "Module32NextW", "OpenSCManagerW", "OpenServiceW",
      "CreateServiceW", "StartServiceW", "ControlService", "DeleteService", "RegOpenKeyExW",
      "RegQueryValueExW", "RegSetValueExW", "RegCloseKey", "RegCreateKeyExW", "RegDeleteValueW",
      "RegEnumKeyExW", "RegEnumValueW", "FindFirstFileExW", "FindNextFileW", "FindClose",
      "GetFileAttributesW", "SetFileAttributesW", "GetFileSize", "SetFilePointer", "CopyFileW",
      "MoveFileWithProgressW", "DeleteFileW", "CreateDirectoryW", "RemoveDirectoryW",
      "GetTempPathW", "GetSystemDirectoryW", "GetWindowsDirectoryW", "GetComputerNameW",
      "GetUserNameW", "GetSystemTimeAsFileTime", "GetTickCount", "QueryPerformanceCounter",
      "GetSystemInfo", "GlobalMemoryStatusEx", "GetNativeSystemInfo", "IsDebuggerPresent",
      "GetCursorPos", "GetForegroundWindow", "FindWindowW", "FindWindowExW", "SetWindowsHookExW",
      "UnhookWindowsHookEx", "GetAsyncKeyState", "GetKeyState", "SendMessageW", "PostMessageW",
      "DrawTextExW", "LoadStringW", "LoadResource", "FindResourceExW", "SizeofResource",
      "CryptAcquireContextW", "CryptCreateHash", "CryptHashData", "CryptEncrypt", "CryptDecrypt",
      "CryptGenKey", "CryptExportKey", "CryptProtectData", "InternetOpenW", "InternetConnectW",
      "InternetOpenUrlW", "InternetReadFile", "HttpOpenRequestW", "HttpSendRequestW",
      "URLDownloadToFileW", "WSAStartup", "socket", "connect", "send", "recv", "closesocket",
      "getaddrinfo", "gethostbyname", "bind", "listen", "accept", "ShellExecuteExW",
      "CoCreateInstance", "CoInitializeEx", "OleInitialize", "SetErrorMode", "GetModuleHandleW",
      "GetProcAddress", "LoadLibraryExW", "VirtualProtectEx", "WriteProcessMemory",
      "ReadProcessMemory", "SetUnhandledExceptionFilter", "ExitProcess"};
  return names;
}

// Motif-level Markov chain: each motif prefers a few successors.
struct MotifChain {
  std::vector<std::vector<double>> transition;  // row-stochastic

  std::size_t next(std::size_t from, Rng& rng) const {
    const auto& row = transition[from];
    double u = rng.uniform();
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (u < row[j]) return j;
      u -= row[j];
    }
    return row.size() - 1;
  }
};

MotifChain make_chain(std::size_t n, Rng& rng) {
  MotifChain chain;
  chain.transition.assign(n, std::vector<double>(n, 0.0));
  const double floor = 0.15 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& row = chain.transition[i];
    std::fill(row.begin(), row.end(), floor);
    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < n; ++j) order[j] = j;
    rng.shuffle(order.begin(), order.end());
    const double weights[] = {0.45, 0.25, 0.15};
    for (std::size_t k = 0; k < 3 && k < n; ++k) row[order[k]] += weights[k];
    double s = 0.0;
    for (double v : row) s += v;
    for (double& v : row) v /= s;
  }
  return chain;
}

std::vector<Motif> draw_motifs(const std::vector<std::string>& pool, std::size_t count, std::size_t min_len,
                               std::size_t max_len, bool distinct_heads, Rng& rng) {
  std::vector<Motif> motifs;
  std::vector<std::string> heads;
  std::size_t guard = 0;
  while (motifs.size() < count) {
    if (++guard > 10000) throw ConfigError("synthetic: cannot draw enough distinct motifs");
    const auto len = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(min_len),
                                                          static_cast<std::int64_t>(max_len)));
    Motif m;
    for (std::size_t k = 0; k < len; ++k) m.push_back(pool[rng.below(pool.size())]);
    if (distinct_heads && std::find(heads.begin(), heads.end(), m.front()) != heads.end()) continue;
    if (std::find(motifs.begin(), motifs.end(), m) != motifs.end()) continue;
    heads.push_back(m.front());
    motifs.push_back(std::move(m));
  }
  return motifs;
}

}  // namespace

std::vector<std::string> api_name_pool(std::size_t count) {
  const auto& base = windows_api_names();
  std::vector<std::string> out(base.begin(), base.begin() + static_cast<std::ptrdiff_t>(std::min(count, base.size())));
  for (std::size_t i = out.size(); i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ApiCall%04zu", i);
    out.emplace_back(buf);
  }
  return out;
}

void validate(const SynthConfig& cfg) {
  if (!(cfg.malware_fraction > 0.0 && cfg.malware_fraction < 1.0)) {
    throw ConfigError("synthetic: malware_fraction must be in (0, 1)");
  }
  if (cfg.n_traces < 2) throw ConfigError("synthetic: need at least 2 traces");
  if (cfg.min_len < 1 || cfg.min_len > cfg.max_len) throw ConfigError("synthetic: bad trace length range");
  if (cfg.vocab_size < 10) throw ConfigError("synthetic: vocab_size must be at least 10");
  if (cfg.repeat_gap_min > cfg.repeat_gap_max) throw ConfigError("synthetic: bad repeat gap range");
  if (!(cfg.onset_rate > 0.0 && cfg.onset_rate <= 1.0)) throw ConfigError("synthetic: onset_rate must be in (0, 1]");
  for (const auto* set : {&cfg.benign_motifs, &cfg.malicious_motifs}) {
    for (const Motif& m : *set) {
      if (m.empty()) throw ConfigError("synthetic: empty motif");
      if (m.size() > cfg.max_len) throw ConfigError("synthetic: motif longer than max trace length");
    }
  }
  std::size_t longest_mal = cfg.malicious_motifs.empty() ? 6 : 0;
  for (const Motif& m : cfg.malicious_motifs) longest_mal = std::max(longest_mal, m.size());
  if (cfg.motif_onset_min + cfg.onset_spread + longest_mal + 8 > cfg.min_len) {
    throw ConfigError("synthetic: min_len too short to plant a malicious motif after the onset");
  }
}

long find_motif(const std::vector<std::string>& calls, const Motif& motif, std::size_t from) {
  if (motif.empty() || calls.size() < motif.size()) return -1;
  for (std::size_t i = from; i + motif.size() <= calls.size(); ++i) {
    if (std::equal(motif.begin(), motif.end(), calls.begin() + static_cast<std::ptrdiff_t>(i))) {
      return static_cast<long>(i);
    }
  }
  return -1;
}

SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  SynthCorpus out;

  const auto names = api_name_pool(cfg.vocab_size);
  // The last sixth of the pool is reserved for malicious motifs.
  const std::size_t n_mal_names = std::max<std::size_t>(3, cfg.vocab_size / 6);
  const std::vector<std::string> benign_pool(names.begin(), names.end() - static_cast<std::ptrdiff_t>(n_mal_names));
  const std::vector<std::string> mal_pool(names.end() - static_cast<std::ptrdiff_t>(n_mal_names), names.end());

  out.benign_motifs = cfg.benign_motifs.empty()
                          ? draw_motifs(benign_pool, kDefaultBenignMotifs, 3, 5, false, rng)
                          : cfg.benign_motifs;
  out.malicious_motifs = cfg.malicious_motifs.empty()
                             ? draw_motifs(mal_pool, kDefaultMaliciousMotifs, 5, 6, true, rng)
                             : cfg.malicious_motifs;
  const std::size_t n_benign = out.benign_motifs.size();
  const std::size_t n_families = out.malicious_motifs.size();
  if (n_benign == 0 || n_families == 0) throw ConfigError("synthetic: need benign and malicious motifs");

  const MotifChain chain = make_chain(n_benign, rng);
  // Each family favours a few benign motifs in its background.
  std::vector<std::vector<std::size_t>> family_sets(n_families);
  for (auto& set : family_sets) {
    std::vector<std::size_t> order(n_benign);
    for (std::size_t j = 0; j < n_benign; ++j) order[j] = j;
    rng.shuffle(order.begin(), order.end());
    set.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, n_benign)));
  }

  const auto n_mal = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.n_traces) * cfg.malware_fraction));
  std::vector<Label> labels(cfg.n_traces, Label::benign);
  std::fill_n(labels.begin(), n_mal, Label::malware);
  rng.shuffle(labels.begin(), labels.end());

  for (std::size_t n = 0; n < cfg.n_traces; ++n) {
    const bool malware = labels[n] == Label::malware;
    const auto target_len = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(cfg.min_len), static_cast<std::int64_t>(cfg.max_len)));
    const int family = malware ? static_cast<int>(rng.below(n_families)) : -1;

    std::size_t state = rng.below(n_benign);
    auto step = [&]() {
      if (malware && rng.uniform() < cfg.family_bias) {
        const auto& set = family_sets[static_cast<std::size_t>(family)];
        state = set[rng.below(set.size())];
      } else {
        state = chain.next(state, rng);
      }
      return state;
    };

    std::vector<std::string> calls;
    long onset = -1;
    auto append = [&calls](const Motif& m) { calls.insert(calls.end(), m.begin(), m.end()); };
    append(out.benign_motifs[state]);
    if (malware) {
      const Motif& planted = out.malicious_motifs[static_cast<std::size_t>(family)];
      // memoryless onset: each boundary past onset_min plants with onset_rate,
      // forced once onset_min + onset_spread is reached
      while (calls.size() < cfg.motif_onset_min) append(out.benign_motifs[step()]);
      while (calls.size() < cfg.motif_onset_min + cfg.onset_spread && !(rng.uniform() < cfg.onset_rate)) {
        append(out.benign_motifs[step()]);
      }
      onset = static_cast<long>(calls.size());
      append(planted);
      while (calls.size() < target_len) {
        const std::size_t gap = static_cast<std::size_t>(rng.between(
            static_cast<std::int64_t>(cfg.repeat_gap_min), static_cast<std::int64_t>(cfg.repeat_gap_max)));
        const std::size_t until = calls.size() + gap;
        while (calls.size() < until && calls.size() < target_len) append(out.benign_motifs[step()]);
        if (calls.size() < target_len) append(planted);
      }
    } else {
      while (calls.size() < target_len) append(out.benign_motifs[step()]);
    }
    std::size_t keep = target_len;
    if (malware) {
      // never cut the first planted motif
      keep = std::max(keep, static_cast<std::size_t>(onset) + out.malicious_motifs[static_cast<std::size_t>(family)].size());
    }
    calls.resize(keep);
    if (calls.size() > cfg.max_len) calls.resize(cfg.max_len);

    char id[32];
    std::snprintf(id, sizeof id, "syn-%06zu", n);
    out.traces.push_back(ApiTrace{id, labels[n], std::move(calls), "synthetic"});
    out.onsets.push_back(onset);
    out.families.push_back(family);
  }
  return out;
}

std::vector<ApiTrace> generate_synthetic(const SynthConfig& cfg) { return generate_synthetic_corpus(cfg).traces; }

}  // namespace emd::corpus

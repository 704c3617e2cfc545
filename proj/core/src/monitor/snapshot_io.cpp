#include <cstring>
#include <fstream>
#include <sstream>

#include "statelens/monitor.hpp"

namespace statelens::monitor {

namespace {

constexpr char kDumpMagic[8] = {'S', 'L', 'S', 'N', 'A', 'P', '1', '\n'};

template <typename T>
void put(std::ostream& out, T v) {
  std::uint8_t buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof buf);
}

template <typename T>
T get(std::istream& in) {
  std::uint8_t buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof buf))
    throw std::runtime_error("truncated snapshot dump");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t{buf[i]} << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

std::uint64_t content_hash(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t SnapshotStore::insert(const vm::MachineState& state) {
  auto bytes = std::make_shared<const std::vector<std::uint8_t>>(vm::serialize(state));
  auto h = content_hash(*bytes);
  std::lock_guard lock(mu_);
  payloads_.emplace(h, std::move(bytes));
  return h;
}

std::size_t SnapshotStore::size() const {
  std::lock_guard lock(mu_);
  return payloads_.size();
}

std::shared_ptr<const std::vector<std::uint8_t>> SnapshotStore::get(std::uint64_t hash) const {
  std::lock_guard lock(mu_);
  auto it = payloads_.find(hash);
  return it == payloads_.end() ? nullptr : it->second;
}

// Record: timestamp u64, event u8, queryIndex i32, length u64, payload.
void write_snapshot_dump(const std::filesystem::path& path,
                         const std::vector<Snapshot>& snapshots) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kDumpMagic, sizeof kDumpMagic);
  for (const auto& s : snapshots) {
    auto payload = vm::serialize(*s.payload);
    put<std::uint64_t>(out, s.timestamp);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(s.event));
    put<std::int32_t>(out, s.query_index);
    put<std::uint64_t>(out, payload.size());
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Snapshot> read_snapshot_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[sizeof kDumpMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kDumpMagic, sizeof magic) != 0)
    throw std::runtime_error("not a snapshot dump: " + path.string());
  std::vector<Snapshot> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    Snapshot s;
    s.timestamp = get<std::uint64_t>(in);
    s.event = static_cast<vm::EventKind>(get<std::uint8_t>(in));
    s.query_index = get<std::int32_t>(in);
    auto len = get<std::uint64_t>(in);
    std::vector<std::uint8_t> payload(len);
    if (!in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(len)))
      throw std::runtime_error("truncated snapshot dump");
    s.payload = std::make_shared<const vm::MachineState>(vm::deserialize(payload));
    out.push_back(std::move(s));
  }
  return out;
}

std::string format_allocation_log(const AllocationLog& log) {
  std::ostringstream out;
  for (const auto& r : log) {
    out << r.position << ' ' << (r.kind == AllocKind::kAlloc ? "alloc" : "free") << ' '
        << r.size << " 0x" << std::hex << r.context << " 0x" << r.address << std::dec << ' '
        << r.timestamp << '\n';
  }
  return out.str();
}

AllocationLog parse_allocation_log(const std::string& text) {
  AllocationLog log;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    AllocationRecord r;
    std::string kind, context, address;
    if (!(fields >> r.position >> kind >> r.size >> context >> address >> r.timestamp))
      throw std::runtime_error("malformed allocation log line: " + line);
    if (kind != "alloc" && kind != "free")
      throw std::runtime_error("unknown allocation record kind: " + kind);
    r.kind = kind == "alloc" ? AllocKind::kAlloc : AllocKind::kFree;
    r.context = std::stoull(context, nullptr, 0);
    r.address = std::stoull(address, nullptr, 0);
    log.push_back(r);
  }
  return log;
}

}  // namespace statelens::monitor

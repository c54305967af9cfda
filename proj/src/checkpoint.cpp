#include "grace/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "grace/errors.hpp"

namespace grace {
namespace {

constexpr const char* kMagic = "grace-checkpoint 1";

std::uint32_t to_little(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((x & 0xffu) << 24) | ((x & 0xff00u) << 8) | ((x >> 8) & 0xff00u) | (x >> 24);
  }
  return x;
}

DataError format_error(const std::string& what) { return DataError(DataError::Kind::Format, 0, "checkpoint: " + what); }

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw format_error("bad integer for " + key);
    return x;
  } catch (const std::logic_error&) {
    throw format_error("bad integer for " + key);
  }
}

std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace

const std::string* Checkpoint::find_metadata(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return &v;
  }
  return nullptr;
}

Checkpoint make_checkpoint(const GraceModel<float>& model, std::vector<std::pair<std::string, std::string>> metadata) {
  Checkpoint c;
  c.config = model.config();
  c.metadata = std::move(metadata);
  for (const auto& e : model.params().entries()) c.tensors.emplace_back(e.name, e.var.value());
  return c;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const EncoderConfig& m = ckpt.config;
  out << kMagic << '\n';
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw format_error("metadata key/value may not contain '=' or newlines: " + k);
    }
    out << "meta." << k << '=' << v << '\n';
  }
  out << "config.layers=" << m.layers << '\n'
      << "config.shared_layers=" << m.shared_layers << '\n'
      << "config.hidden=" << m.hidden << '\n'
      << "config.heads=" << m.heads << '\n'
      << "config.ffn=" << m.ffn << '\n'
      << "config.vocab_size=" << m.vocab_size << '\n'
      << "config.max_len=" << m.max_len << '\n'
      << "config.asc_layers=" << m.asc_layers << '\n'
      << "config.dropout=" << fmt_double(m.dropout) << '\n'
      << "tensors=" << ckpt.tensors.size() << '\n';
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    out << "tensor=" << name << ' ' << t.rows() << ' ' << t.cols() << ' ' << offset << '\n';
    offset += static_cast<std::uint64_t>(t.size()) * 4;
  }
  out << "header_end\n";
  for (const auto& [name, t] : ckpt.tensors) {
    for (Index i = 0; i < t.size(); ++i) {
      std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(t.data()[i]));
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw format_error("missing header magic");
  Checkpoint c;
  struct Entry {
    std::string name;
    Index rows, cols;
    std::uint64_t offset;
  };
  std::vector<Entry> dir;
  long declared = -1;
  bool ended = false;
  bool has_dropout = false;
  while (std::getline(in, line)) {
    if (line == "header_end") {
      ended = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw format_error("malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key.starts_with("meta.")) {
      c.metadata.emplace_back(key.substr(5), value);
    } else if (key == "config.layers") {
      c.config.layers = parse_int(key, value);
    } else if (key == "config.shared_layers") {
      c.config.shared_layers = parse_int(key, value);
    } else if (key == "config.hidden") {
      c.config.hidden = parse_int(key, value);
    } else if (key == "config.heads") {
      c.config.heads = parse_int(key, value);
    } else if (key == "config.ffn") {
      c.config.ffn = parse_int(key, value);
    } else if (key == "config.vocab_size") {
      c.config.vocab_size = parse_int(key, value);
    } else if (key == "config.max_len") {
      c.config.max_len = parse_int(key, value);
    } else if (key == "config.asc_layers") {
      c.config.asc_layers = parse_int(key, value);
    } else if (key == "config.dropout") {
      try {
        c.config.dropout = std::stod(value);
      } catch (const std::logic_error&) {
        throw format_error("bad dropout value");
      }
      has_dropout = true;
    } else if (key == "tensors") {
      declared = parse_int(key, value);
    } else if (key == "tensor") {
      std::istringstream fields(value);
      Entry e{};
      if (!(fields >> e.name >> e.rows >> e.cols >> e.offset) || e.rows < 0 || e.cols < 0) {
        throw format_error("malformed tensor entry '" + value + "'");
      }
      dir.push_back(e);
    } else {
      throw format_error("unknown header key '" + key + "'");
    }
  }
  if (!ended) throw format_error("header not terminated");
  if (!has_dropout) throw format_error("config incomplete");
  if (declared < 0 || static_cast<std::size_t>(declared) != dir.size()) throw format_error("tensor count mismatch");

  std::uint64_t expected = 0;
  for (const Entry& e : dir) {
    if (e.offset != expected) throw format_error("non-contiguous offset for " + e.name);
    Mat<float> t(e.rows, e.cols);
    for (Index i = 0; i < t.size(); ++i) {
      std::uint32_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), 4)) throw format_error("truncated data for " + e.name);
      t.data()[i] = std::bit_cast<float>(to_little(bits));
    }
    expected += static_cast<std::uint64_t>(t.size()) * 4;
    c.tensors.emplace_back(e.name, std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw format_error("trailing bytes after tensor data");
  c.config.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::Io, 0, "cannot write " + path.string());
  write_checkpoint(out, ckpt);
  if (!out) throw DataError(DataError::Kind::Io, 0, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::Io, 0, "cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace grace

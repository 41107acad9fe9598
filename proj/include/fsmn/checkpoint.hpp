#pragma once

// Checkpoint file layout:
//
//   FSMN1
//   key=value            (one per line, terminated by an empty line)
//   ...
//
//   <tensor name>
//   <rows> <cols>
//   <rows*cols little-endian float64>
//   ... next tensor ...
//
// Doubles in the text record use shortest round-trip formatting, so
// save -> load -> save is byte-identical.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "fsmn/model.hpp"
#include "fsmn/optim.hpp"

namespace fsmn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig model;
  OptimConfig optim;
  ScheduleState schedule;
  std::size_t epoch = 0;  // completed epochs
  double best_val_ppl = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  Parameters params;
  OptimState optim_state;  // empty when not saved
};

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw CheckpointError("cannot format double");
  return std::string(buf, end);
}

inline double parse_double(const std::string& s, const std::string& key) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw CheckpointError("bad number for '" + key + "': " + s);
  }
  return v;
}

inline std::uint64_t parse_uint(const std::string& s, const std::string& key) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
    throw CheckpointError("bad integer for '" + key + "': " + s);
  }
  return v;
}

template <class Container>
std::string join_numbers(const Container& c) {
  std::string s;
  for (auto v : c) s += (s.empty() ? "" : ",") + std::to_string(v);
  return s;
}

inline std::vector<std::size_t> parse_number_list(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string::npos) end = s.size();
    std::string item = s.substr(pos, end - pos);
    while (!item.empty() && item.front() == ' ') item.erase(item.begin());
    while (!item.empty() && item.back() == ' ') item.pop_back();
    out.push_back(parse_uint(item, key));
    pos = end + 1;
  }
  return out;
}

namespace detail {

inline void write_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
  out << name << '\n' << m.rows() << ' ' << m.cols() << '\n';
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

}  // namespace detail

inline std::map<std::string, std::string> checkpoint_record(const Checkpoint& c) {
  std::map<std::string, std::string> r;
  r["model.vocab_size"] = std::to_string(c.model.vocab_size);
  r["model.context_window"] = std::to_string(c.model.context_window);
  r["model.embed_dim"] = std::to_string(c.model.embed_dim);
  r["model.hidden_dims"] = join_numbers(c.model.hidden_dims);
  r["model.memory_at"] = join_numbers(c.model.memory_at);
  r["model.memory_order"] = std::to_string(c.model.memory_order);
  r["model.dense_cap"] = std::to_string(c.model.dense_cap);
  r["optim.lr_weights"] = format_double(c.optim.lr_weights);
  r["optim.lr_taps"] = format_double(c.optim.lr_taps);
  r["optim.momentum"] = format_double(c.optim.momentum);
  r["optim.weight_decay"] = format_double(c.optim.weight_decay);
  r["optim.exempt_taps"] = c.optim.exempt_taps ? "1" : "0";
  r["schedule.phase"] = c.schedule.phase == SchedulePhase::stable ? "stable" : "halving";
  r["schedule.best_val_ppl"] = format_double(c.schedule.best_val_ppl);
  r["schedule.halving_epochs_done"] = std::to_string(c.schedule.halving_epochs_done);
  r["schedule.current_scale"] = format_double(c.schedule.current_scale);
  r["train.epoch"] = std::to_string(c.epoch);
  r["train.best_val_ppl"] = format_double(c.best_val_ppl);
  r["train.seed"] = std::to_string(c.seed);
  return r;
}

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  out << "FSMN1\n";
  for (const auto& [k, v] : checkpoint_record(c)) out << k << '=' << v << '\n';
  out << '\n';
  for_each_tensor(c.params, [&](const TensorInfo& info, const Matrix& m) {
    detail::write_tensor(out, info.name, m);
  });
  if (!c.optim_state.velocity.empty()) {
    std::size_t k = 0;
    for_each_tensor(c.params, [&](const TensorInfo& info, const Matrix&) {
      detail::write_tensor(out, "velocity/" + info.name, c.optim_state.velocity.at(k++));
    });
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  write_checkpoint(out, c);
  out.flush();
  if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& origin = "checkpoint") {
  std::string line;
  if (!std::getline(in, line) || line != "FSMN1") {
    throw CheckpointError(origin + ": missing FSMN1 header");
  }
  std::map<std::string, std::string> rec;
  while (true) {
    if (!std::getline(in, line)) throw CheckpointError(origin + ": truncated config record");
    if (line.empty()) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(origin + ": bad record line '" + line + "'");
    rec[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = rec.find(key);
    if (it == rec.end()) throw CheckpointError(origin + ": missing key " + key);
    return it->second;
  };

  Checkpoint c;
  c.model.vocab_size = parse_uint(get("model.vocab_size"), "model.vocab_size");
  c.model.context_window = parse_uint(get("model.context_window"), "model.context_window");
  c.model.embed_dim = parse_uint(get("model.embed_dim"), "model.embed_dim");
  c.model.hidden_dims = parse_number_list(get("model.hidden_dims"), "model.hidden_dims");
  for (auto l : parse_number_list(get("model.memory_at"), "model.memory_at"))
    c.model.memory_at.insert(l);
  c.model.memory_order = parse_uint(get("model.memory_order"), "model.memory_order");
  c.model.dense_cap = parse_uint(get("model.dense_cap"), "model.dense_cap");
  c.optim.lr_weights = parse_double(get("optim.lr_weights"), "optim.lr_weights");
  c.optim.lr_taps = parse_double(get("optim.lr_taps"), "optim.lr_taps");
  c.optim.momentum = parse_double(get("optim.momentum"), "optim.momentum");
  c.optim.weight_decay = parse_double(get("optim.weight_decay"), "optim.weight_decay");
  c.optim.exempt_taps = get("optim.exempt_taps") == "1";
  const auto& phase = get("schedule.phase");
  if (phase != "stable" && phase != "halving") {
    throw CheckpointError(origin + ": unknown schedule phase " + phase);
  }
  c.schedule.phase = phase == "stable" ? SchedulePhase::stable : SchedulePhase::halving;
  c.schedule.best_val_ppl = parse_double(get("schedule.best_val_ppl"), "schedule.best_val_ppl");
  c.schedule.halving_epochs_done =
      parse_uint(get("schedule.halving_epochs_done"), "schedule.halving_epochs_done");
  c.schedule.current_scale = parse_double(get("schedule.current_scale"), "schedule.current_scale");
  c.epoch = parse_uint(get("train.epoch"), "train.epoch");
  c.best_val_ppl = parse_double(get("train.best_val_ppl"), "train.best_val_ppl");
  c.seed = parse_uint(get("train.seed"), "train.seed");
  try {
    c.model.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(origin + ": invalid model config: " + e.what());
  }

  std::map<std::string, Matrix> tensors;
  std::vector<std::string> order;
  while (std::getline(in, line)) {
    if (line.empty()) throw CheckpointError(origin + ": empty tensor name");
    std::string dims;
    if (!std::getline(in, dims)) throw CheckpointError(origin + ": truncated tensor " + line);
    std::istringstream ds(dims);
    std::size_t rows = 0, cols = 0;
    if (!(ds >> rows >> cols)) throw CheckpointError(origin + ": bad shape for tensor " + line);
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != m.size() * sizeof(double)) {
      throw CheckpointError(origin + ": truncated data for tensor " + line);
    }
    if (!tensors.emplace(line, std::move(m)).second) {
      throw CheckpointError(origin + ": duplicate tensor " + line);
    }
    order.push_back(line);
  }

  c.params = zero_parameters(c.model);
  std::vector<Matrix> velocity;
  for_each_tensor(c.params, [&](const TensorInfo& info, Matrix& dst) {
    auto it = tensors.find(info.name);
    if (it == tensors.end()) throw CheckpointError(origin + ": missing tensor " + info.name);
    if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols()) {
      throw CheckpointError(origin + ": tensor " + info.name + " has shape " +
                            it->second.shape() + ", expected " + dst.shape());
    }
    dst = std::move(it->second);
    tensors.erase(it);
    if (auto v = tensors.find("velocity/" + info.name); v != tensors.end()) {
      if (v->second.rows() != dst.rows() || v->second.cols() != dst.cols()) {
        throw CheckpointError(origin + ": velocity for " + info.name + " has wrong shape");
      }
      velocity.push_back(std::move(v->second));
      tensors.erase(v);
    }
  });
  if (!tensors.empty()) throw CheckpointError(origin + ": unexpected tensor " + tensors.begin()->first);
  if (!velocity.empty()) {
    if (velocity.size() != order.size() - velocity.size()) {
      throw CheckpointError(origin + ": velocity buffers are incomplete");
    }
    c.optim_state.velocity = std::move(velocity);
  }
  return c;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  return read_checkpoint(in, path);
}

}  // namespace fsmn

/* Copyright 2026 The vcot Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef VCOT_CHECKPOINT_HPP_
#define VCOT_CHECKPOINT_HPP_

// Checkpoint directory: manifest.txt (format version, config hash, step,
// one line per tensor) and tensors.bin (little-endian float32, row-major).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vcot/autodiff.hpp"
#include "vcot/config.hpp"
#include "vcot/decoder.hpp"
#include "vcot/errors.hpp"

namespace vcot {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  long step = 0;
};

namespace detail {

inline void put_f32(std::string& out, float f) {
  auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
}

inline float get_f32(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

struct TensorEntry {
  std::string name;
  long rows = 0, cols = 0;
  std::uint64_t offset = 0;
};

}  // namespace detail

/// Writes parameters and, when given, the optimizer moments ("adam.m/<name>",
/// "adam.v/<name>"). Files are written to temporaries and renamed.
inline void save_checkpoint(const std::filesystem::path& dir, const ParamStore<float>& params,
                            const CheckpointMeta& meta, const AdamState<float>* adam = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::string blob;
  std::ostringstream man;
  man << "vcot-checkpoint " << kCheckpointVersion << "\n";
  man << "config_hash " << hash_hex(meta.config_hash) << "\n";
  man << "step " << meta.step << "\n";
  if (adam) man << "adam_step " << adam->step << "\n";
  auto emit = [&](const std::string& name, const Mat<float>& m) {
    man << "tensor " << name << " " << m.rows() << " " << m.cols() << " " << blob.size() << "\n";
    for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_f32(blob, m.data()[i]);
  };
  for (std::size_t i = 0; i < params.size(); ++i) emit(params.name(static_cast<ParamId>(i)), params.value(static_cast<ParamId>(i)));
  if (adam) {
    for (std::size_t i = 0; i < params.size(); ++i) emit("adam.m/" + params.name(static_cast<ParamId>(i)), adam->m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) emit("adam.v/" + params.name(static_cast<ParamId>(i)), adam->v[i]);
  }
  man << "blob_bytes " << blob.size() << "\n";

  auto write = [&](const fs::path& p, const std::string& data) {
    const fs::path tmp = p.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw CheckpointError("checkpoint: cannot write " + tmp.string());
      f.write(data.data(), static_cast<std::streamsize>(data.size()));
      if (!f) throw CheckpointError("checkpoint: write failed for " + tmp.string());
    }
    fs::rename(tmp, p);
  };
  write(dir / "tensors.bin", blob);
  write(dir / "manifest.txt", man.str());
}

/// Loads into `params`, whose names and shapes must match the manifest.
/// `expected_hash` must equal the stored config hash.
inline CheckpointMeta load_checkpoint(const std::filesystem::path& dir, ParamStore<float>& params,
                                      std::uint64_t expected_hash, AdamState<float>* adam = nullptr) {
  std::ifstream mf(dir / "manifest.txt");
  if (!mf) throw CheckpointError("checkpoint: missing manifest in " + dir.string());
  std::ifstream bf(dir / "tensors.bin", std::ios::binary);
  if (!bf) throw CheckpointError("checkpoint: missing tensors.bin in " + dir.string());
  std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  CheckpointMeta meta;
  long adam_step = -1;
  std::uint64_t blob_bytes = 0;
  bool have_blob_bytes = false;
  std::vector<detail::TensorEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    auto bad = [&](const std::string& why) {
      return CheckpointError("checkpoint manifest line " + std::to_string(lineno) + ": " + why + " ('" + line + "')");
    };
    if (key == "vcot-checkpoint") {
      int v = 0;
      if (!(is >> v) || v != kCheckpointVersion) throw bad("unsupported format version");
    } else if (key == "config_hash") {
      std::string hex;
      if (!(is >> hex) || hex.size() != 16) throw bad("malformed config hash");
      try {
        meta.config_hash = std::stoull(hex, nullptr, 16);
      } catch (const std::exception&) {
        throw bad("malformed config hash");
      }
    } else if (key == "step") {
      if (!(is >> meta.step)) throw bad("malformed step");
    } else if (key == "adam_step") {
      if (!(is >> adam_step)) throw bad("malformed adam_step");
    } else if (key == "tensor") {
      detail::TensorEntry e;
      if (!(is >> e.name >> e.rows >> e.cols >> e.offset) || e.rows < 0 || e.cols < 0) throw bad("malformed tensor entry");
      entries.push_back(e);
    } else if (key == "blob_bytes") {
      if (!(is >> blob_bytes)) throw bad("malformed blob size");
      have_blob_bytes = true;
    } else {
      throw bad("unknown record");
    }
  }
  if (!have_blob_bytes) throw CheckpointError("checkpoint manifest: missing blob_bytes (truncated manifest?)");
  if (meta.config_hash != expected_hash)
    throw CheckpointError("checkpoint config hash mismatch: checkpoint has " + hash_hex(meta.config_hash) +
                          ", run config has " + hash_hex(expected_hash));
  if (blob.size() != blob_bytes)
    throw CheckpointError("checkpoint blob is " + std::to_string(blob.size()) + " bytes, manifest declares " +
                          std::to_string(blob_bytes));

  // Entries must tile the blob exactly, in order.
  std::uint64_t cursor = 0;
  std::unordered_map<std::string, const detail::TensorEntry*> by_name;
  for (const auto& e : entries) {
    if (e.offset != cursor) throw CheckpointError("checkpoint entry " + e.name + ": offset " + std::to_string(e.offset) + " does not follow previous entry");
    const std::uint64_t bytes = static_cast<std::uint64_t>(e.rows) * static_cast<std::uint64_t>(e.cols) * 4u;
    if (e.offset + bytes > blob.size()) throw CheckpointError("checkpoint entry " + e.name + ": overruns blob");
    cursor += bytes;
    if (!by_name.emplace(e.name, &e).second) throw CheckpointError("checkpoint entry " + e.name + ": duplicated");
  }
  if (cursor != blob.size()) throw CheckpointError("checkpoint entries do not cover the blob");

  auto read_into = [&](const std::string& name, Mat<float>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: missing tensor " + name);
    const auto& e = *it->second;
    if (e.rows != dst.rows() || e.cols != dst.cols())
      throw CheckpointError("checkpoint tensor " + name + ": shape " + std::to_string(e.rows) + "x" +
                            std::to_string(e.cols) + " != expected " + std::to_string(dst.rows()) + "x" +
                            std::to_string(dst.cols()));
    const char* p = blob.data() + e.offset;
    for (Eigen::Index i = 0; i < dst.size(); ++i) dst.data()[i] = detail::get_f32(p + 4 * i);
  };
  // Validate everything before mutating the caller's state.
  ParamStore<float> staged = params;
  for (std::size_t i = 0; i < staged.size(); ++i) read_into(staged.name(static_cast<ParamId>(i)), staged.value(static_cast<ParamId>(i)));
  std::size_t expected = staged.size();
  AdamState<float> st;
  if (adam) {
    if (adam_step < 0) throw CheckpointError("checkpoint has no optimizer state");
    st = AdamState<float>(staged);
    for (std::size_t i = 0; i < staged.size(); ++i) {
      read_into("adam.m/" + staged.name(static_cast<ParamId>(i)), st.m[i]);
      read_into("adam.v/" + staged.name(static_cast<ParamId>(i)), st.v[i]);
    }
    st.step = adam_step;
  }
  if (adam_step >= 0) expected += 2 * staged.size();
  if (entries.size() != expected) throw CheckpointError("checkpoint has unexpected tensors");
  params = std::move(staged);
  if (adam) *adam = std::move(st);
  return meta;
}

}  // namespace vcot

#endif  // VCOT_CHECKPOINT_HPP_

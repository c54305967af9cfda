#pragma once

// Checkpoint file: a text header of "key=value" lines and tensor directory
// entries, terminated by "header_end", followed by raw little-endian float32
// blobs. Offsets in the directory are relative to the first blob byte.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "grace/model.hpp"

namespace grace {

struct Checkpoint {
  EncoderConfig config;
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::pair<std::string, Mat<float>>> tensors;

  GraceModel<float> model() const { return GraceModel<float>(config, tensors); }
  const std::string* find_metadata(const std::string& key) const;
};

Checkpoint make_checkpoint(const GraceModel<float>& model,
                           std::vector<std::pair<std::string, std::string>> metadata = {});

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace grace

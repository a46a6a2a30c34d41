#pragma once

// Text-document serialization of codebooks and model checkpoints.

#include <filesystem>
#include <string>

#include "artoveq/codebook.hpp"
#include "artoveq/taskmodel.hpp"

namespace artoveq::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string codebook_to_text(const NestedCodebook<float>& codebook);
std::string codebook_to_text(const ProgressiveCodebook<float>& codebook);

// Mode of a codebook document: "nested" or "progressive".
std::string codebook_mode(const std::string& text);
NestedCodebook<float> nested_from_text(const std::string& text);
ProgressiveCodebook<float> progressive_from_text(const std::string& text);

std::string model_to_text(const TaskModel<float>& model);
TaskModel<float> model_from_text(const std::string& text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

void save(const std::filesystem::path& path, const NestedCodebook<float>& cb);
void save(const std::filesystem::path& path, const ProgressiveCodebook<float>& cb);
void save(const std::filesystem::path& path, const TaskModel<float>& model);

NestedCodebook<float> load_nested(const std::filesystem::path& path);
ProgressiveCodebook<float> load_progressive(const std::filesystem::path& path);
TaskModel<float> load_model(const std::filesystem::path& path);

}  // namespace artoveq::io

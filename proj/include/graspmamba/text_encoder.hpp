#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "graspmamba/tensor.hpp"

namespace graspmamba::text {

enum class EmbeddingSource { toy, external };

struct TextEmbedding {
    Tensor vector;  // [C_T]
    EmbeddingSource source = EmbeddingSource::toy;
};

struct TextEncoderConfig {
    std::size_t vocab_size = 4096;  // V
    std::size_t dim = 64;           // C_T
    std::uint64_t seed = 0x7e57;
};

/// Lowercases and splits on every non-alphanumeric byte; empty pieces dropped.
std::vector<std::string> tokenize(std::string_view prompt);

/// 64-bit FNV-1a (offset basis 0xcbf29ce484222325, prime 0x100000001b3) over
/// the token bytes.
std::uint64_t token_hash(std::string_view token);

/// Prompt -> embedding table loaded from an embedding file, looked up by exact
/// prompt string.
class ExternalEmbeddings {
   public:
    ExternalEmbeddings(std::size_t dim, std::map<std::string, std::vector<double>> table)
        : dim_(dim), table_(std::move(table)) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return table_.size(); }
    bool contains(const std::string& prompt) const {
        return table_.count(prompt) != 0;
    }
    // Throws LoadError for prompts absent from the file.
    TextEmbedding lookup(const std::string& prompt) const;
    const std::map<std::string, std::vector<double>>& entries() const {
        return table_;
    }

   private:
    std::size_t dim_;
    std::map<std::string, std::vector<double>> table_;
};

/// Reads "GMEMB 1 <C_T>" followed by `prompt \t base64(<C_T> LE float32)` lines.
/// A header dimension different from expected_dim is a LoadError.
ExternalEmbeddings load_external_embeddings(const std::filesystem::path& path,
                                            std::size_t expected_dim);
void save_external_embeddings(const std::filesystem::path& path,
                              const ExternalEmbeddings& embeddings);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Frozen bag-of-hashed-tokens encoder: the embedding of a prompt is the mean of
/// the table rows selected by token_hash(token) % V. An attached external table
/// takes precedence for prompts it contains.
class TextEncoder {
   public:
    explicit TextEncoder(const TextEncoderConfig& config = {});
    TextEncoder(const TextEncoderConfig& config, Tensor table);

    const TextEncoderConfig& config() const { return config_; }
    std::size_t dim() const { return config_.dim; }
    std::size_t bucket(std::string_view token) const;

    TextEmbedding encode(std::string_view prompt) const;
    // [B, C_T] batch of embeddings.
    Tensor encode_batch(const std::vector<std::string>& prompts) const;

    void attach_external(ExternalEmbeddings embeddings);
    const std::optional<ExternalEmbeddings>& external() const { return external_; }

    // [V, C_T]; never receives gradients.
    const Tensor& table() const { return table_; }

   private:
    TextEncoderConfig config_;
    Tensor table_;
    std::optional<ExternalEmbeddings> external_;
};

}  // namespace graspmamba::text

#include "graspmamba/text_encoder.hpp"

#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "graspmamba/error.hpp"
#include "graspmamba/rng.hpp"

namespace graspmamba::text {

std::vector<std::string> tokenize(std::string_view prompt) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : prompt) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            current.push_back(static_cast<char>(std::tolower(u)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::uint64_t token_hash(std::string_view token) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : token) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// base64 (RFC 4648, padded)

namespace {

constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int base64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

std::vector<std::uint8_t> floats_to_le_bytes(const std::vector<double>& values) {
    std::vector<std::uint8_t> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
        for (int b = 0; b < 4; ++b)
            bytes[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
    return bytes;
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t chunk = static_cast<std::uint32_t>(bytes[i]) << 16;
        const std::size_t n = std::min<std::size_t>(3, bytes.size() - i);
        if (n > 1) chunk |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
        if (n > 2) chunk |= bytes[i + 2];
        out.push_back(kAlphabet[(chunk >> 18) & 63]);
        out.push_back(kAlphabet[(chunk >> 12) & 63]);
        out.push_back(n > 1 ? kAlphabet[(chunk >> 6) & 63] : '=');
        out.push_back(n > 2 ? kAlphabet[chunk & 63] : '=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) {
        throw ParseError("base64: length is not a multiple of 4");
    }
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::array<int, 4> v{};
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            const char c = text[i + j];
            if (c == '=' && i + 4 == text.size() && j >= 2) {
                v[j] = 0;
                ++pad;
            } else if (pad > 0 || (v[j] = base64_value(c)) < 0) {
                throw ParseError("base64: invalid character");
            }
        }
        const std::uint32_t chunk = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        out.push_back(static_cast<std::uint8_t>(chunk >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(chunk >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(chunk));
    }
    return out;
}

// ---------------------------------------------------------------------------
// External embeddings

TextEmbedding ExternalEmbeddings::lookup(const std::string& prompt) const {
    auto it = table_.find(prompt);
    if (it == table_.end()) {
        throw LoadError("no external embedding for prompt \"" + prompt + "\"");
    }
    return {Tensor::from_data({dim_}, it->second), EmbeddingSource::external};
}

ExternalEmbeddings load_external_embeddings(const std::filesystem::path& path,
                                            std::size_t expected_dim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open embedding file " + path.string());
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(path.string() + ": missing header line");
    }
    std::istringstream header(line);
    std::string magic;
    int version = 0;
    long long dim = -1;
    std::string extra;
    if (!(header >> magic >> version >> dim) || (header >> extra) ||
        magic != "GMEMB" || version != 1 || dim <= 0) {
        throw ParseError(path.string() +
                         ": header must be \"GMEMB 1 <dim>\", got \"" + line + "\"");
    }
    if (static_cast<std::size_t>(dim) != expected_dim) {
        throw LoadError(path.string() + ": embedding dimension " +
                        std::to_string(dim) + " does not match C_T = " +
                        std::to_string(expected_dim));
    }
    std::map<std::string, std::vector<double>> table;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": expected exactly one TAB separator");
        }
        std::vector<std::uint8_t> bytes;
        try {
            bytes = base64_decode(std::string_view(line).substr(tab + 1));
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": " + e.what());
        }
        if (bytes.size() != static_cast<std::size_t>(dim) * 4) {
            throw LoadError(path.string() + ":" + std::to_string(line_no) +
                            ": record holds " + std::to_string(bytes.size() / 4) +
                            " values, expected " + std::to_string(dim));
        }
        std::vector<double> values(static_cast<std::size_t>(dim));
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
            values[i] = std::bit_cast<float>(bits);
            if (!std::isfinite(values[i])) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                 ": non-finite embedding value");
            }
        }
        table[line.substr(0, tab)] = std::move(values);
    }
    return ExternalEmbeddings(expected_dim, std::move(table));
}

void save_external_embeddings(const std::filesystem::path& path,
                              const ExternalEmbeddings& embeddings) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write embedding file " + path.string());
    out << "GMEMB 1 " << embeddings.dim() << '\n';
    for (const auto& [prompt, values] : embeddings.entries()) {
        if (values.size() != embeddings.dim()) {
            throw ShapeError("embedding for \"" + prompt + "\" has wrong length");
        }
        out << prompt << '\t' << base64_encode(floats_to_le_bytes(values)) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Toy encoder

TextEncoder::TextEncoder(const TextEncoderConfig& config) : config_(config) {
    if (config.vocab_size == 0 || config.dim == 0) {
        throw ArgumentError("text encoder: vocab size and dim must be >= 1");
    }
    Rng rng(config.seed);
    std::vector<double> table(config.vocab_size * config.dim);
    // Rounded to float32 so a checkpointed table reloads bit-identically.
    for (auto& v : table) v = static_cast<float>(rng.normal());
    table_ = Tensor::from_data({config.vocab_size, config.dim}, std::move(table));
}

TextEncoder::TextEncoder(const TextEncoderConfig& config, Tensor table)
    : config_(config), table_(std::move(table)) {
    if (table_.shape() != Shape{config.vocab_size, config.dim}) {
        throw ShapeError("text encoder table has shape " +
                         shape_str(table_.shape()) + ", expected " +
                         shape_str({config.vocab_size, config.dim}));
    }
}

std::size_t TextEncoder::bucket(std::string_view token) const {
    return static_cast<std::size_t>(token_hash(token) % config_.vocab_size);
}

TextEmbedding TextEncoder::encode(std::string_view prompt) const {
    if (external_) {
        const std::string key(prompt);
        if (external_->contains(key)) return external_->lookup(key);
    }
    const auto tokens = tokenize(prompt);
    if (tokens.empty()) {
        throw ArgumentError("prompt \"" + std::string(prompt) +
                            "\" has no alphanumeric tokens");
    }
    const std::size_t dim = config_.dim;
    std::vector<double> acc(dim, 0.0);
    auto table = table_.data();
    for (const auto& token : tokens) {
        const double* row = table.data() + bucket(token) * dim;
        for (std::size_t i = 0; i < dim; ++i) acc[i] += row[i];
    }
    const double n = static_cast<double>(tokens.size());
    for (auto& v : acc) v /= n;
    return {Tensor::from_data({dim}, std::move(acc)), EmbeddingSource::toy};
}

Tensor TextEncoder::encode_batch(const std::vector<std::string>& prompts) const {
    std::vector<double> data;
    data.reserve(prompts.size() * config_.dim);
    for (const auto& p : prompts) {
        const Tensor e_tensor = encode(p).vector;
        auto e = e_tensor.data();
        data.insert(data.end(), e.begin(), e.end());
    }
    return Tensor::from_data({prompts.size(), config_.dim}, std::move(data));
}

void TextEncoder::attach_external(ExternalEmbeddings embeddings) {
    if (embeddings.dim() != config_.dim) {
        throw LoadError("external embeddings have dimension " +
                        std::to_string(embeddings.dim()) + ", encoder expects " +
                        std::to_string(config_.dim));
    }
    external_ = std::move(embeddings);
}

}  // namespace graspmamba::text

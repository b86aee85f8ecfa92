#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "graspmamba/error.hpp"
#include "graspmamba/text_encoder.hpp"

using namespace graspmamba;
using namespace graspmamba::text;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("gm_text_" + name);
}

std::vector<double> table_row(const TextEncoder& enc, std::size_t row) {
    const auto t = enc.table().data();
    return {t.begin() + row * enc.dim(), t.begin() + (row + 1) * enc.dim()};
}

}  // namespace

TEST_CASE("tokenize folds case and punctuation") {
    CHECK(tokenize("Grasp the RED bar.") == std::vector<std::string>{"grasp", "the", "red", "bar"});
    CHECK(tokenize("  pick--up,the  disk!! ") == std::vector<std::string>{"pick", "up", "the", "disk"});
    CHECK(tokenize("...").empty());
}

TEST_CASE("token_hash is 64-bit FNV-1a") {
    CHECK(token_hash("") == 0xcbf29ce484222325ULL);
    CHECK(token_hash("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(token_hash("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("encode is deterministic and folding-invariant") {
    const TextEncoder enc({256, 16, 3});
    const auto a = enc.encode("Grasp the RED bar.").vector.to_vector();
    CHECK(a == enc.encode("Grasp the RED bar.").vector.to_vector());
    CHECK(a == enc.encode("grasp the red bar").vector.to_vector());
    CHECK(a == TextEncoder({256, 16, 3}).encode("grasp the red bar").vector.to_vector());
    CHECK(enc.encode("x").source == EmbeddingSource::toy);
}

TEST_CASE("a single-token prompt returns its table row exactly") {
    const TextEncoder enc({128, 8, 5});
    CHECK(enc.encode("Mug").vector.to_vector() == table_row(enc, token_hash("mug") % 128));
    CHECK(enc.bucket("mug") == token_hash("mug") % 128);
}

TEST_CASE("encode is the mean of the token rows") {
    const TextEncoder enc({64, 4, 9});
    const auto r1 = table_row(enc, enc.bucket("red")), r2 = table_row(enc, enc.bucket("disk"));
    const auto e = enc.encode("red disk").vector.to_vector();
    for (std::size_t i = 0; i < 4; ++i) CHECK(e[i] == doctest::Approx((r1[i] + r2[i]) / 2).epsilon(1e-15));
}

TEST_CASE("empty prompts are an argument error") {
    const TextEncoder enc({64, 4, 9});
    CHECK_THROWS_AS(enc.encode(""), ArgumentError);
    CHECK_THROWS_AS(enc.encode(" ?! "), ArgumentError);
    CHECK_THROWS_AS(TextEncoder({0, 4, 1}), ArgumentError);
}

TEST_CASE("encode_batch stacks embeddings") {
    const TextEncoder enc({64, 4, 9});
    const Tensor b = enc.encode_batch({"red disk", "blue bar"});
    CHECK(b.shape() == Shape{2, 4});
    const auto second = enc.encode("blue bar").vector.to_vector();
    for (std::size_t i = 0; i < 4; ++i) CHECK(b.data()[4 + i] == second[i]);
}

TEST_CASE("base64 round trip") {
    const std::vector<std::uint8_t> bytes{0, 1, 2, 250, 251, 252, 253};
    CHECK(base64_encode({'M', 'a', 'n'}) == "TWFu");
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
    CHECK_THROWS_AS(base64_decode("abc"), ParseError);
}

TEST_CASE("external embeddings: file round trip and lookup") {
    const auto path = temp_path("roundtrip.gmemb");
    const std::vector<double> v{0.5, -1.25, 3.0};
    save_external_embeddings(path, ExternalEmbeddings(3, {{"grasp the mug", v}}));
    const auto loaded = load_external_embeddings(path, 3);
    CHECK(loaded.size() == 1);
    CHECK(loaded.lookup("grasp the mug").vector.to_vector() == v);
    CHECK(loaded.lookup("grasp the mug").source == EmbeddingSource::external);
    CHECK_THROWS_AS(loaded.lookup("grasp the cup"), LoadError);

    // Bytes on disk are little-endian float32.
    std::ifstream in(path);
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    CHECK(header == "GMEMB 1 3");
    const auto raw = base64_decode(line.substr(line.find('\t') + 1));
    REQUIRE(raw.size() == 12);
    float f;
    std::memcpy(&f, raw.data() + 4, 4);
    CHECK(f == -1.25f);
}

TEST_CASE("external embeddings: dimension mismatch and missing files") {
    const auto path = temp_path("dim.gmemb");
    save_external_embeddings(path, ExternalEmbeddings(3, {{"p", {1, 2, 3}}}));
    CHECK_THROWS_AS(load_external_embeddings(path, 4), LoadError);
    CHECK_THROWS_AS(load_external_embeddings(temp_path("absent.gmemb"), 3), LoadError);
    {
        std::ofstream out(temp_path("bad.gmemb"));
        out << "GMEMB 1 3\nno tab here\n";
    }
    CHECK_THROWS_AS(load_external_embeddings(temp_path("bad.gmemb"), 3), ParseError);
}

TEST_CASE("an attached table overrides the toy encoder for its prompts") {
    TextEncoder enc({64, 2, 1});
    const auto toy = enc.encode("red bar").vector.to_vector();
    enc.attach_external(ExternalEmbeddings(2, {{"grasp the mug", {7.0, 8.0}}}));
    CHECK(enc.encode("grasp the mug").vector.to_vector() == std::vector<double>{7.0, 8.0});
    CHECK(enc.encode("red bar").vector.to_vector() == toy);
    CHECK_THROWS_AS(enc.attach_external(ExternalEmbeddings(3, {})), LoadError);
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace forge::lora {

// Row-major dense matrix, double precision throughout. Entries must stay
// finite; construction and arithmetic check this.
struct matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> entries; // rows*cols, row-major

    matrix() = default;
    matrix(std::size_t r, std::size_t c) : rows(r), cols(c), entries(r * c, 0.0) {}
    matrix(std::size_t r, std::size_t c, std::vector<double> e);

    double& at(std::size_t r, std::size_t c) { return entries[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return entries[r * cols + c]; }

    bool operator==(const matrix&) const = default;
};

struct layer_module {
    std::string name; // unique within a layer
    std::int64_t in_dim = 0;
    std::int64_t out_dim = 0;
    bool has_bias = false;
};

struct layer_norm_spec {
    std::string name;
    std::int64_t dim = 0;
};

struct arch_spec {
    std::string name;
    std::int64_t vocab_size = 0;
    std::int64_t d_model = 0;
    std::int64_t n_layers = 0;
    std::vector<layer_module> layer_modules;  // repeated n_layers times
    std::vector<layer_norm_spec> per_layer_norms;
    std::int64_t final_norm_dim = 0;
    bool tied_head = true; // head shares the embedding matrix
    std::int64_t head_out_dim = 0;
};

struct lora_config {
    std::int64_t r = 8;
    double alpha = 8.0;
    double dropout = 0.0; // planning metadata only; nothing stochastic here
    std::vector<std::string> target_modules; // exact module-name matches
};

arch_spec arch_from_json(const nlohmann::json& j);   // throws bad_arch_spec
lora_config lora_config_from_json(const nlohmann::json& j); // throws bad_lora_config

// Exact parameter counts with overflow-checked 64-bit arithmetic
// (throws overflow on wrap). Norm layers count weight + bias (2*dim).
std::int64_t count_base_params(const arch_spec& arch);

// n_layers * sum over targeted modules of r*(in_dim + out_dim).
// A target pattern matching no module name throws no_target_match.
std::int64_t count_lora_params(const arch_spec& arch, const lora_config& cfg);

std::int64_t count_all_params(const arch_spec& arch, const lora_config& cfg);

// A is r x in_dim, B is out_dim x r; fresh adapters have B = 0 so the
// forward pass starts exactly equal to the base layer.
struct adapter_pair {
    matrix a;
    matrix b;
    double alpha = 1.0;
    std::int64_t r = 1;
};

// A ~ uniform(-1/sqrt(in_dim), +1/sqrt(in_dim)) from the seeded generator
// (row-major draw order), B = 0.
adapter_pair init_adapter(std::size_t in_dim, std::size_t out_dim, std::int64_t r, double alpha,
                          std::uint64_t seed);

// y = W*x + (alpha/r) * B*(A*x); throws shape_error on mismatch
std::vector<double> lora_forward(const matrix& w, const adapter_pair& adapter,
                                 const std::vector<double>& x);

// W + (alpha/r) * B*A (not idempotent: merging twice adds the delta twice)
matrix merge(const matrix& w, const adapter_pair& adapter);

// Validates the analytic adapter gradients of L = 0.5*||y - target||^2
// against central finite differences (step 1e-6); returns the max relative
// error over all entries of A and B. W itself is frozen: no gradient for
// it exists in this API.
double grad_check(const matrix& w, const adapter_pair& adapter, const std::vector<double>& x,
                  const std::vector<double>& target);

struct quantized {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int8_t> q; // row-major, clamped to +/-(2^(bits-1)-1)
    double scale = 0.0;         // max|W| / (2^(bits-1)-1); 0 for all-zero W
};

// Symmetric absmax quantization, bits in {4, 8}; throws unsupported_bits.
// Guarantees |W - dequantize(Q)| <= scale/2 elementwise.
quantized quantize_absmax(const matrix& w, int bits);

matrix dequantize(const quantized& q);

// ceil(param_count * bits / 8) for bits in {4, 8, 16, 32}
std::int64_t weight_memory_bytes(std::int64_t param_count, int bits);

enum class model_label { m7b, m12b, m20b, m30b, m40b, m65b };

model_label parse_model_label(const std::string& s); // "7B" | "12b" | ... ; throws bad_model_label
std::string model_label_name(model_label m);

// Published sizing table, exact lookup; bits in {4, 8, 16}. The 2x80GB
// cell is encoded as 160. The table is data, not a formula: it is not
// generated from weight_memory_bytes.
int recommended_gpu(model_label m, int bits);

} // namespace forge::lora

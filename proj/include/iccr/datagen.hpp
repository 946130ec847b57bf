#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "iccr/rng.hpp"
#include "iccr/scm.hpp"
#include "iccr/tensor.hpp"

namespace iccr::gen {

enum class ThetaDist { kUniform, kNormal };
enum class Task { kCounterfactual, kContinuation };

const char* theta_dist_name(ThetaDist d);
ThetaDist theta_dist_from_name(const std::string& name);
const char* task_name(Task t);
Task task_from_name(const std::string& name);

struct GenConfig {
    int embed_dim = 1;  // E
    int n_min = 2;
    int n_max = 50;
    ThetaDist theta_dist = ThetaDist::kUniform;
    std::optional<int> diversity;  // latent pool size d
    scm::NoiseModel noise;
    Task task = Task::kCounterfactual;
    std::optional<int> fixed_z;
    std::uint64_t seed = 0;

    void validate() const;
};

// One serialized exchangeable sequence plus the latents that generated it.
struct PromptRecord {
    ad::Tensor tokens;           // T x E, T = 2n+2 (counterfactual) or 2n+1 (continuation)
    std::vector<double> target;  // E
    std::vector<double> theta;
    std::vector<double> beta;
    std::vector<std::vector<double>> u_x;  // n rows of E
    std::vector<std::vector<double>> u_y;
    std::vector<double> x_query;  // x_cf (counterfactual) or x_{n+1} (continuation)
    std::vector<double> fresh_u_y;  // continuation only
    int z = 0;                      // 1-based; 0 for continuation
    int n = 0;

    int query_row() const { return tokens.rows() - 1; }
    std::vector<double> x_anchor() const;
    std::vector<double> y_anchor() const;
};

struct ThetaPool {
    std::vector<double> values;
    std::vector<double> weights;
    std::vector<double> cumulative;
};

ThetaPool make_pool(const GenConfig& cfg);

// exp of the Shannon entropy (natural log, 0 log 0 = 0).
double ess(const std::vector<double>& weights);

PromptRecord sample_sequence(const GenConfig& cfg, std::uint64_t index);
PromptRecord sample_sequence(const GenConfig& cfg, std::uint64_t index, std::optional<int> n_override,
                             std::optional<int> z_override);

// Training batches share n (and optionally z) across their members.
std::vector<PromptRecord> sample_batch(const GenConfig& cfg, std::uint64_t batch_index,
                                       int batch_size, bool shared_z);

// Recompute the continuation target with the given fresh noise.
std::vector<double> continuation_target(const GenConfig& cfg, const PromptRecord& record,
                                        const std::vector<double>& fresh_noise);

// In-context pairs permuted, z remapped; the target is invariant.
PromptRecord permute_pairs(const PromptRecord& record, const std::vector<int>& perm);

struct Dataset {
    GenConfig config;
    std::vector<PromptRecord> records;
};

void write_dataset(const GenConfig& cfg, std::uint64_t count, const std::string& path);
void write_dataset(const GenConfig& cfg, const std::vector<PromptRecord>& records,
                   const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace iccr::gen

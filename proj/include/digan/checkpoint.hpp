#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "digan/diffusion.hpp"
#include "digan/sacnet.hpp"
#include "digan/sequence.hpp"

namespace digan {

// Checkpoints are a JSON manifest plus a little-endian float64 blob whose
// layout follows the manifest's layer list. The manifest records the blob
// length and an FNV-1a checksum; any mismatch raises IntegrityError.

std::uint64_t fnv1a64(const void* data, std::size_t bytes);

struct DenoiserCheckpoint {
    Denoiser denoiser;
    NoiseSchedule schedule;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::uint64_t seed = 0;
};

void save_denoiser(const std::filesystem::path& dir, const Denoiser& denoiser, int T,
                   double beta_start, double beta_end, std::uint64_t seed);
DenoiserCheckpoint load_denoiser(const std::filesystem::path& dir);

void save_sacnet(const std::filesystem::path& dir, SacNetwork& network,
                 const std::vector<double>& loss_trace, std::uint64_t seed);

struct SacNetCheckpoint {
    SacNetwork network;
    std::vector<double> loss_trace;
    std::uint64_t seed = 0;
};

SacNetCheckpoint load_sacnet(const std::filesystem::path& dir);

void save_normalizer(const std::filesystem::path& path, const Normalizer& normalizer);
Normalizer load_normalizer(const std::filesystem::path& path);

} // namespace digan

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace xfer {

/// 64-bit FNV-1a. Used for vocab fingerprints, file digests and stream tags;
/// not a cryptographic hash.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;
std::string hex64(std::uint64_t value);
/// Hex FNV-1a digest of a file's bytes; throws kIo when unreadable.
std::string file_digest(const std::filesystem::path& path);

}  // namespace xfer

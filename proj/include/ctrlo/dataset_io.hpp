#pragma once

#include <string>

#include "ctrlo/scene.hpp"

namespace ctrlo {

// Binary dataset format (little-endian):
//   magic "CTLO", version u32 = 1, sample count u64
//   per sample:
//     G u32, D_feat u32, object count u32
//     K*D_feat f32 features, row-major patch order
//     per object: category u32, centroid 2*f32, mask as K bits
//                 (LSB-first within each byte, padded to a byte boundary)
//     query count u32
//     per query: object index u32, D_emb u32, D_emb*f32 code,
//                has_point u8, if set: 2*f32 point

/// Writes the dataset bit-exactly; the same dataset always produces the same
/// bytes. An empty dataset yields a readable header-only file.
void write_features(const Dataset& ds, const std::string& path);

/// Lossless read with validation of every sample's invariants. Malformed
/// input raises format_error carrying the byte offset of the problem.
Dataset ingest_features(const std::string& path);

}  // namespace ctrlo

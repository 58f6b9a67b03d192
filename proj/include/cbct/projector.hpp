#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbct/geometry.hpp"
#include "cbct/volume.hpp"

namespace cbct {

// Cone-beam forward projector A.
//
// One ray per detector pixel centre. Each ray is clipped to the support of
// the trilinear interpolant (the voxel grid grown by one voxel) and sampled
// every voxel_size mm at the midpoints of that segment; each sample adds
// voxel_size * trilinear(vol) to the pixel.
ProjectionStack forward_project(const Volume3D& vol, const ConeBeamGeometry& geom);

// Exact transpose of forward_project: scatters voxel_size * weight * y for
// the same samples and weights. Accumulation is split over a fixed number of
// view chunks whose partial volumes are summed in chunk order, so the result
// does not depend on the worker count.
Volume3D back_project(const ProjectionStack& proj, const ConeBeamGeometry& geom);

// |<Ax, y> - <x, A^T y>| / (|Ax| |y|) for x, y drawn from N(0, 1) with `seed`.
double adjoint_gap(const ConeBeamGeometry& geom, std::uint64_t seed);

// Dense row-major M x N matrix of A (M = pixels, N = voxels). Testing only;
// cost is N forward projections.
std::vector<double> materialize_dense(const ConeBeamGeometry& geom);

// Writes a row-major float64 matrix with a (rows, cols, 0) uint64 header,
// all little-endian.
void write_dense_matrix(const std::string& path, const std::vector<double>& matrix,
                        std::uint64_t rows, std::uint64_t cols);
std::vector<double> read_dense_matrix(const std::string& path, std::uint64_t& rows,
                                      std::uint64_t& cols);

} // namespace cbct

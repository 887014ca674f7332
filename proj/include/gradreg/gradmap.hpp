#pragma once

#include "gradreg/volume.hpp"

namespace gradreg {

/// Gradient intensity map: per-voxel Euclidean length of the central
/// difference vector (V(x+1)−V(x−1), V(y+1)−V(y−1), V(z+1)−V(z−1)).
/// Out-of-grid neighbours replicate the edge voxel. Every axis needs at
/// least two voxels.
Volume gradient_map(const Volume& v);

/// Network input for the gradient branch: the map of the min-max normalized
/// volume, itself rescaled to [0, 1].
Volume branch_gradient_map(const Volume& v);

}  // namespace gradreg

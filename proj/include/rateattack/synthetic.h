#ifndef RATEATTACK_SYNTHETIC_H_
#define RATEATTACK_SYNTHETIC_H_

// Procedural photograph-like test images: a smooth backdrop overlaid with
// occluding textured shapes of power-law sizes ("dead leaves"), film grain
// and a slight optical blur. Output is on exact 8-bit levels.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rateattack/image.h"

namespace rateattack {

Image SyntheticImage(std::uint64_t seed, std::size_t width = 768,
                     std::size_t height = 512);

// Image i uses a seed derived from (seed, i).
std::vector<Image> SyntheticCorpus(std::size_t count, std::uint64_t seed,
                                   std::size_t width = 768,
                                   std::size_t height = 512);

}  // namespace rateattack

#endif  // RATEATTACK_SYNTHETIC_H_

#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "binec/image.hpp"
#include "binec/models.hpp"

namespace binec {

/// Whole-image predictions where every patch is inpainted from its
/// neighbourhood instead of being decoded from its own code.
struct InpaintPredictions {
  Tensor masked;                // masked BINet, neighbour codes only
  Tensor sinet;                 // SINet, causal decoded neighbours
  std::array<Tensor, 4> intra;  // DC, H, V, TM from decoded borders
  Tensor decoded;               // SINet base reconstruction the others read
};

/// `masked` must be a masked BINet, `sinet` a SINet; image [3,H,W] in [-1,1].
InpaintPredictions predict_inpainting(const CodecModel& masked, const CodecModel& sinet,
                                      const Tensor& image);

struct InpaintScore {
  std::string method;
  double psnr = 0.0;  // mean over patches, capped
  double ssim = 0.0;
  int patches = 0;
};

/// Mean per-patch PSNR/SSIM (byte space) of each predictor over patches with
/// a full 3x3 neighbourhood. Order: masked BINet, SINet, DC, H, V, TM.
std::vector<InpaintScore> score_inpainting(const CodecModel& masked, const CodecModel& sinet,
                                           std::span<const Image8> images);

}  // namespace binec

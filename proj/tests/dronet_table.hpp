#pragma once

namespace testutil {

struct ConvShape {
  const char* id;
  int k_in, k_out, k, stride, h_in;
};

// DroNet convolutions as listed layer by layer; inputs are square.
inline constexpr ConvShape kConvs[] = {
    {"conv_1", 1, 32, 5, 2, 200},   {"conv_2", 32, 32, 3, 2, 50},   {"conv_3", 32, 32, 3, 1, 25},
    {"conv_4", 32, 32, 1, 2, 50},   {"conv_5", 32, 64, 3, 2, 25},   {"conv_6", 64, 64, 3, 1, 13},
    {"conv_7", 32, 64, 1, 2, 25},   {"conv_8", 64, 128, 3, 2, 13},  {"conv_9", 128, 128, 3, 1, 7},
    {"conv_10", 64, 128, 1, 2, 13},
};

inline constexpr int kFcInputs = 6272;

}  // namespace testutil

// Copyright 2026 The hepaseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Umbrella header. PNG output lives in hepaseg/png.hpp (needs libpng).

#ifndef HEPASEG_HEPASEG_HPP
#define HEPASEG_HEPASEG_HPP

#include "hepaseg/cascade.hpp"
#include "hepaseg/components.hpp"
#include "hepaseg/crf.hpp"
#include "hepaseg/distance_transform.hpp"
#include "hepaseg/error.hpp"
#include "hepaseg/gaussian_filter.hpp"
#include "hepaseg/geometry.hpp"
#include "hepaseg/keyvalue.hpp"
#include "hepaseg/metaio.hpp"
#include "hepaseg/metrics.hpp"
#include "hepaseg/overlay.hpp"
#include "hepaseg/parallel.hpp"
#include "hepaseg/permutohedral.hpp"
#include "hepaseg/phantom.hpp"
#include "hepaseg/preprocess.hpp"
#include "hepaseg/toynet.hpp"
#include "hepaseg/tuner.hpp"
#include "hepaseg/version.hpp"
#include "hepaseg/volume.hpp"

#endif  // HEPASEG_HEPASEG_HPP

// Copyright 2026 The depscore Authors
// SPDX-License-Identifier: Apache-2.0
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

// Umbrella header.

#pragma once

#include "depscore/context.hpp"
#include "depscore/data.hpp"
#include "depscore/errors.hpp"
#include "depscore/eval.hpp"
#include "depscore/latent.hpp"
#include "depscore/predictor.hpp"
#include "depscore/scoring.hpp"
#include "depscore/synth.hpp"
#include "depscore/uncertainty.hpp"

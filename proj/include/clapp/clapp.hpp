// Copyright 2026 The CLAPP Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Everything in one include.

#pragma once

#include "clapp/commands.hpp"
#include "clapp/config.hpp"
#include "clapp/encoder.hpp"
#include "clapp/errors.hpp"
#include "clapp/io.hpp"
#include "clapp/layer.hpp"
#include "clapp/optimizer.hpp"
#include "clapp/plasticity.hpp"
#include "clapp/probe.hpp"
#include "clapp/recurrent.hpp"
#include "clapp/stream.hpp"
#include "clapp/tensor.hpp"
#include "clapp/training.hpp"
#include "clapp/verify.hpp"

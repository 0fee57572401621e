// Copyright 2026 The Epihawkes Authors
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

#ifndef EPIHAWKES_EPIHAWKES_HPP_
#define EPIHAWKES_EPIHAWKES_HPP_

#include "epihawkes/core.hpp"
#include "epihawkes/diagnostics.hpp"
#include "epihawkes/io.hpp"
#include "epihawkes/kdpf.hpp"
#include "epihawkes/kernels.hpp"
#include "epihawkes/lineage.hpp"
#include "epihawkes/obs.hpp"
#include "epihawkes/sim.hpp"
#include "epihawkes/version.hpp"

#endif  // EPIHAWKES_EPIHAWKES_HPP_

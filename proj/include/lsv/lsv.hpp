// lsv/lsv.hpp
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef LSV_LSV_HPP_
#define LSV_LSV_HPP_

#include "lsv/common.hpp"
#include "lsv/data.hpp"
#include "lsv/eval.hpp"
#include "lsv/ladder.hpp"
#include "lsv/matrix.hpp"
#include "lsv/nets.hpp"
#include "lsv/numcore.hpp"
#include "lsv/passes.hpp"
#include "lsv/rng.hpp"
#include "lsv/train.hpp"

#endif  // LSV_LSV_HPP_

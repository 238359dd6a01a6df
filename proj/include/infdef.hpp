#ifndef INFDEF_HPP_
#define INFDEF_HPP_

// Umbrella header.

#include "infdef/errors.hpp"
#include "infdef/linalg.hpp"
#include "infdef/io.hpp"
#include "infdef/manifold.hpp"
#include "infdef/latent.hpp"
#include "infdef/inflation.hpp"
#include "infdef/autodiff.hpp"
#include "infdef/flow.hpp"
#include "infdef/train.hpp"
#include "infdef/deflation.hpp"
#include "infdef/bounds.hpp"
#include "infdef/baseline.hpp"
#include "infdef/experiment.hpp"

#endif  // INFDEF_HPP_

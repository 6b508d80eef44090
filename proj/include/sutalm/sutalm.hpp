// sutalm/sutalm.hpp

#pragma once

#include "sutalm/common.hpp"
#include "sutalm/corpus.hpp"
#include "sutalm/acoustic.hpp"
#include "sutalm/lm.hpp"
#include "sutalm/decode.hpp"
#include "sutalm/tta.hpp"
#include "sutalm/wer.hpp"
#include "sutalm/select.hpp"
#include "sutalm/eval.hpp"
#include "sutalm/config.hpp"

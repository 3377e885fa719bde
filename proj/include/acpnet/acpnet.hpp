#pragma once

#include "acpnet/tensor.hpp"
#include "acpnet/parameter.hpp"
#include "acpnet/graph.hpp"
#include "acpnet/ops.hpp"
#include "acpnet/gradcheck.hpp"
#include "acpnet/gradsuite.hpp"
#include "acpnet/checkpoint.hpp"
#include "acpnet/geometry.hpp"
#include "acpnet/acpconv.hpp"
#include "acpnet/layers.hpp"
#include "acpnet/blocks.hpp"
#include "acpnet/network.hpp"
#include "acpnet/fusion.hpp"
#include "acpnet/metrics.hpp"
#include "acpnet/pipeline.hpp"
#include "acpnet/synthetic.hpp"
#include "acpnet/cloud_io.hpp"
#include "acpnet/config.hpp"
#include "acpnet/ablation.hpp"
#include "acpnet/report.hpp"

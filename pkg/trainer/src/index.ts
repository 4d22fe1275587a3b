export { DomainError, FormatError, NumericError, UsageError } from "./errors.js";
export { Rng } from "./rng.js";
export { Tape, Tensor, scalarOf, tensorOf } from "./tape.js";
export {
  Layer,
  LayerKind,
  Stack,
  parseMaterial,
  randomStack,
  serializeMaterial,
  validateLayer,
} from "./material.js";
export {
  BsdfTable,
  GRAZING_COS,
  Manifest,
  binCentersUpper,
  grazingWiMask,
  grazingWoMask,
  readManifest,
  readTable,
  woBinCenters,
} from "./sptb.js";
export {
  ACT_RELU,
  DenseLayer,
  MlpWeights,
  RANGE_SIGMOID,
  RANGE_SOFTPLUS,
  WEIGHTS_VERSION,
  readWeights,
  validateWeights,
  writeWeights,
} from "./spck.js";
export {
  FEATURES_PER_LAYER,
  PARAMS_PER_LAYER,
  TrainableMlp,
  defaultRangeTags,
  mappedOutputs,
  mappedRaw,
  applyRangeMaps,
  stackFeatures,
} from "./mlp.js";
export {
  GRAZING_COS_EPS,
  LayerParamsT,
  PairGeom,
  buildPairGeom,
  evalCanonicalTape,
  evalPairs,
  evalPairsFunctionalTape,
  gridPairDirs,
  layerParamsFromNumbers,
  predictedTableTape,
} from "./singleScatter.js";
export {
  ADAM_BETA1,
  ADAM_BETA2,
  ADAM_EPS,
  Dataset,
  GRAZING_WEIGHT,
  LoadedConfigData,
  MetricsRow,
  TrainResult,
  TrainingConfig,
  checkLossFinite,
  configLossTape,
  configMae,
  loadDataset,
  lossWeights,
  makeConfig,
  mapParamsTape,
  targetChannels,
  train,
} from "./train.js";

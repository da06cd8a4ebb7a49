export {
  FeatureMap,
  ManifestEntry,
  ReceptiveFieldGeometry,
  encodeFeatureFile,
  readFeatureFile,
  readManifest,
  validateFeatureMap,
  writeFeatureFile,
  writeManifest,
} from './featureFile.js'
export {
  DecodedImage,
  UndecodableImageError,
  VGG_BGR_MEANS,
  decodeImageFile,
  listImageFiles,
  preprocessImage,
} from './image.js'
export {
  MissingModelError,
  defaultConvLayerName,
  layerOutputModel,
  loadModel,
  saveModel,
} from './model.js'
export {
  DEFAULT_INPUT_SIZE,
  DEFAULT_OFFSET,
  DEFAULT_STRIDE,
  ExtractionResult,
  ExtractorConfig,
  extractDirectory,
} from './extractor.js'

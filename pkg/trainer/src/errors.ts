/** Error taxonomy mirroring the reference library's exit-code conventions:
 *  usage/domain problems (2), file-format/I-O problems (3), numerical
 *  failures during training (4). */

export class UsageError extends Error {
  override name = "UsageError";
}

export class DomainError extends Error {
  override name = "DomainError";
}

export class FormatError extends Error {
  override name = "FormatError";
}

export class NumericError extends Error {
  override name = "NumericError";
}

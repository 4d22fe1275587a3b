/** Layer-stack material text format: parser and serializer.
 *
 * The format is the same one the reference library reads and writes ('#'
 * comments, whitespace tokens, required keys per block). The trainer's
 * domain is narrower: finite fiber/surface layers only — hg layers,
 * semi-infinite layers and substrates are rejected as out of domain, since
 * the parameter network neither consumes nor emits them.
 */

import { DomainError, FormatError } from "./errors.js";

export type LayerKind = "fiber" | "surface";

export interface Layer {
  kind: LayerKind;
  albedo: [number, number, number];
  roughness: number;
  f0: [number, number, number];
  thickness: number;
  orientation: [number, number, number];
}

export interface Stack {
  layers: Layer[];
  includeDelta: boolean;
}

interface Token {
  line: number;
  col: number;
  text: string;
}

function* tokenize(text: string): Generator<Token> {
  const lines = text.split("\n");
  for (let ln = 0; ln < lines.length; ln++) {
    let line = lines[ln];
    const cut = line.indexOf("#");
    if (cut >= 0) line = line.slice(0, cut);
    const re = /\S+/g;
    let m: RegExpExecArray | null;
    while ((m = re.exec(line)) !== null) {
      yield { line: ln + 1, col: m.index + 1, text: m[0] };
    }
  }
}

class TokenStream {
  private items: Token[];
  private pos = 0;
  private last: [number, number] = [1, 1];

  constructor(text: string) {
    this.items = Array.from(tokenize(text));
  }

  peek(): Token | null {
    return this.pos < this.items.length ? this.items[this.pos] : null;
  }

  next(expect: string): Token {
    const item = this.peek();
    if (item === null) {
      throw new FormatError(
        `${this.last[0]}:${this.last[1]}: unexpected end of input, expected ${expect}`,
      );
    }
    this.pos += 1;
    this.last = [item.line, item.col];
    return item;
  }
}

function parseNumber(tokens: TokenStream, key: string): number {
  const tok = tokens.next(`number for '${key}'`);
  if (tok.text === "inf") return Infinity;
  const v = Number(tok.text);
  if (!Number.isFinite(v) && tok.text !== "inf") {
    throw new FormatError(`${tok.line}:${tok.col}: expected a number for '${key}', got '${tok.text}'`);
  }
  if (Number.isNaN(v)) {
    throw new FormatError(`${tok.line}:${tok.col}: expected a number for '${key}', got '${tok.text}'`);
  }
  return v;
}

const LAYER_KEYS = ["kind", "albedo", "roughness", "f0", "thickness", "orientation"] as const;
const LAYER_ARITY: Record<string, number> = {
  kind: 1,
  albedo: 3,
  roughness: 1,
  f0: 3,
  thickness: 1,
  orientation: 3,
};

function parseLayerBlock(tokens: TokenStream): Record<string, string | number[]> {
  const open = tokens.next("'{'");
  if (open.text !== "{") {
    throw new FormatError(`${open.line}:${open.col}: expected '{' after 'layer', got '${open.text}'`);
  }
  const values: Record<string, string | number[]> = {};
  for (;;) {
    const tok = tokens.next("a layer key or '}'");
    if (tok.text === "}") {
      const missing = LAYER_KEYS.filter((k) => !(k in values));
      if (missing.length > 0) {
        throw new FormatError(`${tok.line}:${tok.col}: layer is missing key(s): ${missing.join(", ")}`);
      }
      return values;
    }
    if (!(LAYER_KEYS as readonly string[]).includes(tok.text)) {
      throw new FormatError(`${tok.line}:${tok.col}: unknown layer key '${tok.text}'`);
    }
    if (tok.text in values) {
      throw new FormatError(`${tok.line}:${tok.col}: duplicate layer key '${tok.text}'`);
    }
    if (tok.text === "kind") {
      values[tok.text] = tokens.next("a kind name").text;
    } else {
      const arity = LAYER_ARITY[tok.text];
      const nums: number[] = [];
      for (let i = 0; i < arity; i++) nums.push(parseNumber(tokens, tok.text));
      values[tok.text] = nums;
    }
  }
}

function checkRgb(name: string, v: number[]): [number, number, number] {
  if (v.length !== 3 || v.some((x) => !Number.isFinite(x) || x < 0 || x > 1)) {
    throw new DomainError(`${name} components must be in [0, 1], got ${JSON.stringify(v)}`);
  }
  return [v[0], v[1], v[2]];
}

export function validateLayer(raw: {
  kind: string;
  albedo: number[];
  roughness: number;
  f0: number[];
  thickness: number;
  orientation: number[];
}): Layer {
  if (raw.kind === "hg") {
    throw new DomainError("hg layers are outside the trainer domain");
  }
  if (raw.kind !== "fiber" && raw.kind !== "surface") {
    throw new DomainError(`kind must be fiber or surface, got '${raw.kind}'`);
  }
  const albedo = checkRgb("albedo", raw.albedo);
  const f0 = checkRgb("f0", raw.f0);
  if (!(raw.roughness > 0 && raw.roughness <= 1)) {
    throw new DomainError(`roughness must be in (0, 1], got ${raw.roughness}`);
  }
  if (!Number.isFinite(raw.thickness)) {
    throw new DomainError("semi-infinite layers are outside the trainer domain");
  }
  if (!(raw.thickness > 0)) {
    throw new DomainError(`thickness must be positive, got ${raw.thickness}`);
  }
  const o = raw.orientation;
  const norm = Math.sqrt(o[0] * o[0] + o[1] * o[1] + o[2] * o[2]);
  if (o.length !== 3 || o.some((x) => !Number.isFinite(x)) || Math.abs(norm - 1) > 1e-6) {
    throw new DomainError(`orientation must be a unit 3-vector, got ${JSON.stringify(o)}`);
  }
  return {
    kind: raw.kind,
    albedo,
    roughness: raw.roughness,
    f0,
    thickness: raw.thickness,
    orientation: [o[0], o[1], o[2]],
  };
}

export function parseMaterial(text: string): Stack {
  const tokens = new TokenStream(text);
  let includeDelta: boolean | null = null;
  const rawLayers: Record<string, string | number[]>[] = [];
  for (;;) {
    const item = tokens.peek();
    if (item === null) break;
    const tok = tokens.next("a top-level key");
    if (tok.text === "delta_transmission") {
      if (includeDelta !== null) {
        throw new FormatError(`${tok.line}:${tok.col}: duplicate key 'delta_transmission'`);
      }
      const val = tokens.next("true or false");
      if (val.text !== "true" && val.text !== "false") {
        throw new FormatError(`${val.line}:${val.col}: expected true or false, got '${val.text}'`);
      }
      includeDelta = val.text === "true";
    } else if (tok.text === "substrate") {
      throw new DomainError("substrates are outside the trainer domain");
    } else if (tok.text === "layer") {
      rawLayers.push(parseLayerBlock(tokens));
    } else {
      throw new FormatError(`${tok.line}:${tok.col}: unknown top-level key '${tok.text}'`);
    }
  }
  if (rawLayers.length === 0) {
    throw new FormatError("material defines no layers");
  }
  const layers = rawLayers.map((spec, i) => {
    try {
      return validateLayer({
        kind: spec["kind"] as string,
        albedo: spec["albedo"] as number[],
        roughness: (spec["roughness"] as number[])[0],
        f0: spec["f0"] as number[],
        thickness: (spec["thickness"] as number[])[0],
        orientation: spec["orientation"] as number[],
      });
    } catch (e) {
      if (e instanceof DomainError) {
        throw new DomainError(`layers[${i}]: ${e.message}`);
      }
      throw e;
    }
  });
  return { layers, includeDelta: includeDelta ?? false };
}

function fmt(x: number): string {
  if (!Number.isFinite(x)) return "inf";
  // Shortest round-trip decimal; the reference parser recovers the exact
  // float64 from it.
  return String(x);
}

function fmt3(v: [number, number, number]): string {
  return `${fmt(v[0])} ${fmt(v[1])} ${fmt(v[2])}`;
}

export function serializeMaterial(stack: Stack): string {
  const lines = [`delta_transmission ${stack.includeDelta ? "true" : "false"}`];
  for (const layer of stack.layers) {
    lines.push(
      "layer {",
      `    kind ${layer.kind}`,
      `    albedo ${fmt3(layer.albedo)}`,
      `    roughness ${fmt(layer.roughness)}`,
      `    f0 ${fmt3(layer.f0)}`,
      `    thickness ${fmt(layer.thickness)}`,
      `    orientation ${fmt3(layer.orientation)}`,
      "}",
    );
  }
  return lines.join("\n") + "\n";
}

/** Random single- or multi-layer stack over the training parameter ranges:
 *  alpha in [0.05, 1], albedo and f0 in [0, 1]^3, optical thickness
 *  log-uniform in [0.1, 8], orientation uniform over the upper hemisphere. */
export function randomStack(rng: { next(): number; uniform(a: number, b: number): number }, nLayers: number): Stack {
  const layers: Layer[] = [];
  for (let i = 0; i < nLayers; i++) {
    const kind: LayerKind = rng.next() < 0.5 ? "fiber" : "surface";
    const alpha = rng.uniform(0.05, 1.0);
    const albedo: [number, number, number] = [rng.next(), rng.next(), rng.next()];
    const thickness = Math.exp(rng.uniform(Math.log(0.1), Math.log(8.0)));
    const f0: [number, number, number] = [rng.next(), rng.next(), rng.next()];
    const z = rng.next();
    const phi = rng.uniform(0, 2 * Math.PI);
    const s = Math.sqrt(Math.max(1 - z * z, 0));
    // Renormalize so the exact-unit-length check downstream always holds.
    const ox = s * Math.cos(phi);
    const oy = s * Math.sin(phi);
    const norm = Math.sqrt(ox * ox + oy * oy + z * z);
    layers.push({
      kind,
      albedo,
      roughness: alpha,
      f0,
      thickness,
      orientation: [ox / norm, oy / norm, z / norm],
    });
  }
  return { layers, includeDelta: false };
}

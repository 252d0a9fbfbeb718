/** Grayscale image buffer: Base64 decode, checksum, RGBA expansion.

The decoded pixel buffer is the single source of image data; overlay
rendering never receives it, so AI annotations cannot alter pixels.
*/

export class GrayscaleImage {
  readonly width: number;
  readonly height: number;
  readonly pixels: Uint8Array;

  constructor(width: number, height: number, pixels: Uint8Array) {
    if (pixels.length !== width * height) {
      throw new Error(`pixel count ${pixels.length} does not match ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.pixels = pixels;
  }

  static fromBase64(data: string, width: number, height: number): GrayscaleImage {
    return new GrayscaleImage(width, height, decodeBase64(data));
  }

  /** FNV-1a over the pixel bytes; cheap integrity check for tests and audits. */
  checksum(): number {
    let hash = 0x811c9dc5;
    for (const byte of this.pixels) {
      hash ^= byte;
      hash = Math.imul(hash, 0x01000193);
    }
    return hash >>> 0;
  }

  /** Expand to RGBA for putImageData; returns a fresh buffer every call. */
  toRgba(): Uint8ClampedArray {
    const out = new Uint8ClampedArray(this.width * this.height * 4);
    for (let i = 0; i < this.pixels.length; i++) {
      const v = this.pixels[i] as number;
      out[i * 4] = v;
      out[i * 4 + 1] = v;
      out[i * 4 + 2] = v;
      out[i * 4 + 3] = 255;
    }
    return out;
  }
}

const B64_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

/** Minimal Base64 decoder that works in both browser and test runtimes. */
export function decodeBase64(data: string): Uint8Array {
  const clean = data.replace(/=+$/, "");
  const out: number[] = [];
  let bits = 0;
  let value = 0;
  for (const ch of clean) {
    const index = B64_ALPHABET.indexOf(ch);
    if (index < 0) {
      throw new Error(`invalid Base64 character ${JSON.stringify(ch)}`);
    }
    value = (value << 6) | index;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push((value >> bits) & 0xff);
    }
  }
  return new Uint8Array(out);
}

export function encodeBase64(bytes: Uint8Array): string {
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const a = bytes[i] as number;
    const b = i + 1 < bytes.length ? (bytes[i + 1] as number) : 0;
    const c = i + 2 < bytes.length ? (bytes[i + 2] as number) : 0;
    const triple = (a << 16) | (b << 8) | c;
    out += B64_ALPHABET[(triple >> 18) & 63];
    out += B64_ALPHABET[(triple >> 12) & 63];
    out += i + 1 < bytes.length ? B64_ALPHABET[(triple >> 6) & 63] : "=";
    out += i + 2 < bytes.length ? B64_ALPHABET[triple & 63] : "=";
  }
  return out;
}

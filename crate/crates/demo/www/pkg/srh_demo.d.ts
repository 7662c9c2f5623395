/* tslint:disable */
/* eslint-disable */

/**
 * A random-dot stereo pair with its ground truth.
 */
export class RdsScene {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Ground truth through the colour ramp; occluded pixels are dimmed.
     */
    disparity_rgba(): Uint8Array;
    height(): number;
    left_rgba(): Uint8Array;
    /**
     * Mean residual over the pixels whose true disparity equals `shift`,
     * or -1 when there are none.
     */
    matched_residual(shift: number): number;
    constructor(seed: number, width: number, height: number, d_max: number, layers: number, patches: number);
    /**
     * Per-pixel colour difference between the left view and the right view
     * moved by `shift` columns, as gray. Pixels whose true disparity equals
     * `shift` are tinted green.
     */
    residual_rgba(shift: number): Uint8Array;
    right_rgba(): Uint8Array;
    width(): number;
}

/**
 * Matching costs over `levels` disparities: a V-shaped valley at `centre`
 * with slope `sharpness`, plus an optional second valley of the given depth.
 */
export function cost_curve(levels: number, centre: number, sharpness: number, distractor: number, distractor_depth: number): Float64Array;

/**
 * Expected disparity under [`soft_argmin_weights`], computed by the
 * network's own regression head.
 */
export function soft_argmin(costs: Float64Array): number;

/**
 * Softmax of the negated costs, i.e. the weight the soft argmin gives each
 * disparity.
 */
export function soft_argmin_weights(costs: Float64Array): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_rdsscene_free: (a: number, b: number) => void;
    readonly cost_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly rdsscene_disparity_rgba: (a: number) => [number, number];
    readonly rdsscene_height: (a: number) => number;
    readonly rdsscene_left_rgba: (a: number) => [number, number];
    readonly rdsscene_matched_residual: (a: number, b: number) => number;
    readonly rdsscene_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly rdsscene_residual_rgba: (a: number, b: number) => [number, number];
    readonly rdsscene_right_rgba: (a: number) => [number, number];
    readonly rdsscene_width: (a: number) => number;
    readonly soft_argmin: (a: number, b: number) => [number, number, number];
    readonly soft_argmin_weights: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;

/* tslint:disable */
/* eslint-disable */

/**
 * A pannable, zoomable view of the fixture landscape.
 */
export class MapView {
    free(): void;
    [Symbol.dispose](): void;
    lat(): number;
    lon(): number;
    constructor(lat: number, lon: number, zoom: number, width: number, height: number, seed: bigint);
    /**
     * `direction` is `up`, `down`, `left` or `right`.
     */
    pan(direction: string, absolute: boolean): void;
    render(): Uint8Array;
    zoom(): number;
    zoom_in(absolute: boolean): void;
    zoom_out(absolute: boolean): void;
}

/**
 * Applies one enhancement tool to an RGBA image and returns RGBA.
 */
export function apply_tool(rgba: Uint8Array, width: number, height: number, tool: string): Uint8Array;

/**
 * Most cosine-similar positive and negative example for a query.
 *
 * `points` holds `x, y` pairs and `labels` one entry per point (positive when
 * non-zero). Returns the indices of the two retrieved points.
 */
export function retrieve_2d(points: Float64Array, labels: Uint8Array, qx: number, qy: number): Uint32Array;

/**
 * A procedural sample image (`eelgrass`, `solar` or `aquaculture`) as RGBA.
 */
export function sample_image(dataset: string, positive: boolean, size: number, seed: bigint): Uint8Array;

/**
 * Names accepted by [`apply_tool`].
 */
export function tool_list(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_mapview_free: (a: number, b: number) => void;
    readonly apply_tool: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly mapview_lat: (a: number) => number;
    readonly mapview_lon: (a: number) => number;
    readonly mapview_new: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
    readonly mapview_pan: (a: number, b: number, c: number, d: number) => [number, number];
    readonly mapview_render: (a: number) => [number, number, number, number];
    readonly mapview_zoom: (a: number) => number;
    readonly mapview_zoom_in: (a: number, b: number) => [number, number];
    readonly mapview_zoom_out: (a: number, b: number) => [number, number];
    readonly retrieve_2d: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly sample_image: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly tool_list: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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

import copy
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import ValidationError

from app.core.exceptions import ConfigSchemaException, ModelException, SafeDException, describe_validation_error
from app.models.network import ModelConfig
from app.models.telemetry import WindowSample
from app.services.safed_network import ChannelFusion, LocalFusion, PairwiseAttention, ResNetBlock, SafeDNet, TCN

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
WindowInput = Union[Sequence[WindowSample], np.ndarray, torch.Tensor]

CHECKPOINT_KIND = "safe-d"
_HEADER_SIZE = struct.Struct("<Q")
# 기울기 노름이 이보다 작으면 상대 오차 대신 이 값으로 나눈다 (중앙 차분 반올림 잡음 수준)
GRADIENT_NORM_FLOOR = 1e-6


def write_container(
    path: PathLike,
    kind: str,
    arrays: Dict[str, np.ndarray],
    config: Dict[str, Any],
    epoch: int = 0,
    seed: int = 0,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """8바이트 LE 헤더 길이 + JSON 헤더 + 선언 순서의 원시 배열"""
    path = Path(path)
    manifest = []
    blobs = []
    offset = 0
    for name, array in arrays.items():
        array = np.asarray(array, order="C")
        blob = array.tobytes()
        manifest.append({
            "name": name,
            "shape": list(array.shape),
            "dtype": array.dtype.str,
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps(
        {"kind": kind, "config": config, "epoch": epoch, "seed": seed, "arrays": manifest, "extra": extra or {}},
        sort_keys=True,
        ensure_ascii=False,
    ).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as handle:
            handle.write(_HEADER_SIZE.pack(len(header)))
            handle.write(header)
            for blob in blobs:
                handle.write(blob)
    except OSError as e:
        logger.error(f"체크포인트 저장 실패 ({path}): {e}")
        raise ModelException(f"체크포인트를 저장할 수 없습니다: {path}: {e}")
    return path


def read_container(path: PathLike) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
        (length,) = _HEADER_SIZE.unpack_from(raw, 0)
        header = json.loads(raw[_HEADER_SIZE.size:_HEADER_SIZE.size + length].decode("utf-8"))
    except (OSError, struct.error, ValueError) as e:
        raise ModelException(f"체크포인트를 읽을 수 없습니다: {path}: {e}")

    body = _HEADER_SIZE.size + length
    arrays = {}
    for item in header.get("arrays", []):
        start = body + item["offset"]
        if start + item["nbytes"] > len(raw):
            raise ModelException(f"체크포인트가 잘렸습니다: {path} ({item['name']})")
        flat = np.frombuffer(raw, dtype=np.dtype(item["dtype"]), count=int(np.prod(item["shape"], dtype=np.int64)), offset=start)
        arrays[item["name"]] = flat.reshape(item["shape"]).copy()
    return header, arrays


class ModelService:
    """SAFE-D 네트워크 구성, 추론, 손실, 체크포인트 서비스"""

    def build(self, cfg: Union[ModelConfig, Dict[str, Any], None] = None, seed: Optional[int] = None) -> SafeDNet:
        cfg = self.parse_config(cfg)
        if seed is not None:
            torch.manual_seed(seed)
        model = SafeDNet(cfg)
        logger.debug(f"모델 생성: channels={cfg.channels}, params={self.parameter_count(model)}")
        return model

    @staticmethod
    def parse_config(cfg: Union[ModelConfig, Dict[str, Any], None]) -> ModelConfig:
        if isinstance(cfg, ModelConfig):
            return cfg
        try:
            return ModelConfig.model_validate(cfg or {})
        except ValidationError as e:
            raise ConfigSchemaException(f"모델 설정 오류: {describe_validation_error(e)}")

    @staticmethod
    def parameter_count(model: torch.nn.Module) -> int:
        return int(sum(p.numel() for p in model.parameters()))

    def to_tensor(self, windows: WindowInput, window_len: Optional[int] = None) -> torch.Tensor:
        """윈도우 목록/배열 → (N, 3, M) float 텐서"""
        if isinstance(windows, torch.Tensor):
            tensor = windows
        elif isinstance(windows, np.ndarray):
            tensor = torch.from_numpy(np.asarray(windows, dtype=np.float32))
        else:
            if len(windows) == 0:
                raise ModelException("입력 윈도우가 없습니다")
            tensor = torch.from_numpy(np.stack([w.to_array() for w in windows]).astype(np.float32))

        if tensor.dim() == 2:
            tensor = tensor.unsqueeze(0)
        if tensor.dim() != 3 or tensor.shape[1] != 3:
            raise ModelException(f"입력 형태는 (N, 3, M)이어야 합니다 (입력 {tuple(tensor.shape)})")
        if window_len is not None and tensor.shape[-1] != window_len:
            raise ModelException(f"윈도우 길이 불일치: {tensor.shape[-1]} != {window_len}")
        return tensor

    def forward(self, model: Optional[SafeDNet], windows: WindowInput, mode: str = "infer") -> torch.Tensor:
        """logits = Head(F_Glo + F_Loc); infer 모드는 드롭아웃 off, BN running stats"""
        if model is None:
            raise ModelException("모델 파라미터가 초기화되지 않았습니다")
        if mode not in ("train", "infer"):
            raise ModelException(f"알 수 없는 모드: {mode}")

        x = self.to_tensor(windows, model.cfg.window_len).to(next(model.parameters()).dtype)
        try:
            if mode == "train":
                model.train()
                return model(x)
            model.eval()
            with torch.no_grad():
                return model(x)
        except SafeDException:
            raise
        except RuntimeError as e:
            logger.error(f"순전파 실패: {e}")
            raise ModelException(f"순전파에 실패했습니다: {str(e)}")

    def predict(self, model: SafeDNet, windows: WindowInput, batch_size: int = 256) -> np.ndarray:
        x = self.to_tensor(windows, model.cfg.window_len)
        outputs = [self.forward(model, x[i:i + batch_size]).argmax(dim=-1) for i in range(0, x.shape[0], batch_size)]
        return torch.cat(outputs).cpu().numpy().astype(np.int64)

    def probabilities(self, model: SafeDNet, windows: WindowInput) -> np.ndarray:
        return torch.softmax(self.forward(model, windows), dim=-1).cpu().numpy()

    @staticmethod
    def loss(logits: torch.Tensor, labels: Union[Sequence[int], torch.Tensor]) -> torch.Tensor:
        """배치 평균 교차 엔트로피"""
        if not isinstance(labels, torch.Tensor):
            labels = torch.as_tensor(list(labels), dtype=torch.long)
        return F.cross_entropy(logits, labels.to(logits.device))

    # 구성 요소 단위 연산

    def resnet_block(self, block: ResNetBlock, x: torch.Tensor) -> torch.Tensor:
        expected = block.units[0].linear.in_features
        if x.shape[-1] != expected:
            raise ModelException(f"ResNet 입력 폭 불일치: {x.shape[-1]} != {expected}")
        return block(x)

    def global_branch(self, model: SafeDNet, windows: WindowInput) -> List[torch.Tensor]:
        """채널별 (B, W, L) 특징 행렬 (기본 64×90)"""
        branch = self._require(model.global_branch, "전역 분기")
        x = model.select_channels(self.to_tensor(windows, model.cfg.window_len))
        return [features.transpose(-1, -2) for features in branch(x)]

    def pairwise_attention(self, attention: PairwiseAttention, a: torch.Tensor, b: torch.Tensor, return_weights: bool = False):
        expected = attention.w_q.in_features
        if a.shape[-1] != expected or b.shape[-1] != expected:
            raise ModelException(f"어텐션 입력 폭 불일치: {a.shape[-1]}, {b.shape[-1]} != {expected}")
        return attention(a, b, return_weights=return_weights)

    def channel_fusion(self, fusion: ChannelFusion, features: List[torch.Tensor]) -> torch.Tensor:
        """features: 채널별 (B, L, W) → F_Glo (B, W)"""
        if len(features) != fusion.alpha.numel():
            raise ModelException(f"채널 수 불일치: {len(features)} != {fusion.alpha.numel()}")
        if len({tuple(f.shape) for f in features}) != 1:
            raise ModelException("채널 특징 행렬의 형태가 서로 다릅니다")
        return fusion(features)

    def tcn_forward(self, tcn: TCN, frames: torch.Tensor) -> torch.Tensor:
        """frames: (N, C, F) → (N, W, F)"""
        expected = tcn.layers[0].net[0].in_channels
        if frames.dim() != 3 or frames.shape[1] != expected:
            raise ModelException(f"TCN 입력 형태 오류: {tuple(frames.shape)} (채널 {expected})")
        return tcn(frames)

    def local_fusion(self, fusion: LocalFusion, frame_features: torch.Tensor) -> torch.Tensor:
        """frame_features: (B, R, F, W) → F_Loc (B, W)"""
        if frame_features.dim() != 4:
            raise ModelException(f"프레임 특징 형태 오류: {tuple(frame_features.shape)}")
        return fusion(frame_features)

    @staticmethod
    def _require(module, name: str):
        if module is None:
            raise ModelException(f"{name}가 비활성화된 모델입니다")
        return module

    # 검증

    def gradient_check(
        self,
        model: SafeDNet,
        windows: WindowInput,
        labels: Sequence[int],
        step: float = 1e-4,
    ) -> float:
        """float64 중앙 차분과 해석적 기울기의 최대 상대 오차 (노름 합이 GRADIENT_NORM_FLOOR 미만이면 floor로 나눔)"""
        replica = copy.deepcopy(model).double()
        replica.eval()
        x = self.to_tensor(windows, model.cfg.window_len).double()
        y = torch.as_tensor(list(labels), dtype=torch.long)

        def objective() -> torch.Tensor:
            return self.loss(replica(x), y)

        replica.zero_grad()
        objective().backward()

        worst = 0.0
        for name, param in replica.named_parameters():
            if not param.requires_grad:
                continue
            analytic = param.grad.detach().clone() if param.grad is not None else torch.zeros_like(param)
            numeric = torch.zeros_like(param)
            flat = param.data.view(-1)
            with torch.no_grad():
                for index in range(flat.numel()):
                    original = flat[index].item()
                    flat[index] = original + step
                    plus = objective().item()
                    flat[index] = original - step
                    minus = objective().item()
                    flat[index] = original
                    numeric.view(-1)[index] = (plus - minus) / (2 * step)
            scale = max(float(torch.norm(analytic) + torch.norm(numeric)), GRADIENT_NORM_FLOOR)
            error = float(torch.norm(analytic - numeric)) / scale
            logger.debug(f"gradient check {name}: {error:.2e}")
            worst = max(worst, error)
        return worst

    # 체크포인트

    def save_checkpoint(self, model: SafeDNet, path: PathLike, epoch: int = 0, seed: int = 0, extra: Optional[Dict[str, Any]] = None) -> Path:
        arrays = {name: tensor.detach().cpu().numpy() for name, tensor in model.state_dict().items()}
        path = write_container(path, CHECKPOINT_KIND, arrays, model.cfg.model_dump(mode="json"), epoch, seed, extra)
        logger.info(f"체크포인트 저장: {path} (epoch {epoch})")
        return path

    def load_checkpoint(self, path: PathLike) -> Tuple[SafeDNet, Dict[str, Any]]:
        """헤더의 설정으로 모델을 만들고 이름/형태 목록을 검증한 뒤 가중치 복원"""
        header, arrays = read_container(path)
        if header.get("kind") != CHECKPOINT_KIND:
            raise ModelException(f"SAFE-D 체크포인트가 아닙니다: {path} (kind={header.get('kind')})")

        model = self.build(header.get("config", {}))
        state = model.state_dict()
        if list(arrays) != list(state):
            missing = sorted(set(state) - set(arrays))
            unexpected = sorted(set(arrays) - set(state))
            raise ModelException(f"체크포인트 목록 불일치: missing={missing}, unexpected={unexpected}")
        for name, array in arrays.items():
            if tuple(array.shape) != tuple(state[name].shape):
                raise ModelException(f"체크포인트 형태 불일치 ({name}): {array.shape} != {tuple(state[name].shape)}")

        model.load_state_dict({name: torch.from_numpy(array) for name, array in arrays.items()})
        model.eval()
        return model, header

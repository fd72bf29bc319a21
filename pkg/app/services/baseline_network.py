import torch
import torch.nn as nn


class CNNTransformer(nn.Module):
    """합성곱 인코더 2층 + self-attention 인코더 2층 + 선형 헤드 (CT 베이스라인)"""

    def __init__(
        self,
        channels: int = 3,
        seq_len: int = 120,
        d_model: int = 64,
        nhead: int = 4,
        num_layers: int = 2,
        num_classes: int = 2,
        dropout: float = 0.1,
    ):
        super().__init__()
        self.seq_len = seq_len
        self.encoder = nn.Sequential(
            nn.Conv1d(channels, d_model // 2, kernel_size=5, padding=2),
            nn.BatchNorm1d(d_model // 2),
            nn.ReLU(),
            nn.Conv1d(d_model // 2, d_model, kernel_size=5, padding=2),
            nn.BatchNorm1d(d_model),
            nn.ReLU(),
        )
        self.pos_encoding = nn.Parameter(torch.zeros(seq_len, d_model))
        encoder_layer = nn.TransformerEncoderLayer(
            d_model=d_model,
            nhead=nhead,
            dim_feedforward=d_model * 2,
            dropout=dropout,
            batch_first=True,
        )
        self.transformer = nn.TransformerEncoder(encoder_layer, num_layers)
        self.classifier = nn.Linear(d_model, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # (B, C, M) → (B, M, d_model)
        x = self.encoder(x).transpose(1, 2)
        x = self.transformer(x + self.pos_encoding.unsqueeze(0))
        return self.classifier(x.mean(dim=1))
